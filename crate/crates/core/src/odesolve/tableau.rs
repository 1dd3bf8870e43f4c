//! Dormand–Prince 5(4) coefficients with the standard dense-output
//! weights. `y1` is the fifth-order solution and also the seventh stage
//! point, which is what makes first-same-as-last reuse possible.

pub const C2: f64 = 0.2;
pub const C3: f64 = 0.3;
pub const C4: f64 = 0.8;
pub const C5: f64 = 8.0 / 9.0;

pub const A21: f64 = 0.2;
pub const A31: f64 = 3.0 / 40.0;
pub const A32: f64 = 9.0 / 40.0;
pub const A41: f64 = 44.0 / 45.0;
pub const A42: f64 = -56.0 / 15.0;
pub const A43: f64 = 32.0 / 9.0;
pub const A51: f64 = 19372.0 / 6561.0;
pub const A52: f64 = -25360.0 / 2187.0;
pub const A53: f64 = 64448.0 / 6561.0;
pub const A54: f64 = -212.0 / 729.0;
pub const A61: f64 = 9017.0 / 3168.0;
pub const A62: f64 = -355.0 / 33.0;
pub const A63: f64 = 46732.0 / 5247.0;
pub const A64: f64 = 49.0 / 176.0;
pub const A65: f64 = -5103.0 / 18656.0;
pub const A71: f64 = 35.0 / 384.0;
pub const A73: f64 = 500.0 / 1113.0;
pub const A74: f64 = 125.0 / 192.0;
pub const A75: f64 = -2187.0 / 6784.0;
pub const A76: f64 = 11.0 / 84.0;

// fifth minus fourth order weights
pub const E1: f64 = 71.0 / 57600.0;
pub const E3: f64 = -71.0 / 16695.0;
pub const E4: f64 = 71.0 / 1920.0;
pub const E5: f64 = -17253.0 / 339200.0;
pub const E6: f64 = 22.0 / 525.0;
pub const E7: f64 = -1.0 / 40.0;

pub const D1: f64 = -12715105075.0 / 11282082432.0;
pub const D3: f64 = 87487479700.0 / 32700410799.0;
pub const D4: f64 = -10690763975.0 / 1880347072.0;
pub const D5: f64 = 701980252875.0 / 199316789632.0;
pub const D6: f64 = -1453857185.0 / 822651844.0;
pub const D7: f64 = 69997945.0 / 29380423.0;

/// Stage-point coefficients (times `h`) on `k1..k6` for stages 2..=7.
pub const STAGE_A: [[f64; 6]; 6] = [
    [A21, 0.0, 0.0, 0.0, 0.0, 0.0],
    [A31, A32, 0.0, 0.0, 0.0, 0.0],
    [A41, A42, A43, 0.0, 0.0, 0.0],
    [A51, A52, A53, A54, 0.0, 0.0],
    [A61, A62, A63, A64, A65, 0.0],
    [A71, 0.0, A73, A74, A75, A76],
];

pub const ERR: [f64; 7] = [E1, 0.0, E3, E4, E5, E6, E7];

/// Weights on `[y0, y1, k1, k2, k3, k4, k5, k6, k7]` giving the
/// interpolant at fraction `theta` of a step of size `h`.
pub fn dense_weights(theta: f64, h: f64) -> [f64; 9] {
    let t1 = 1.0 - theta;
    let a = theta;
    let b = theta * t1;
    let c = theta * b;
    let e = c * t1;
    [
        1.0 - a + b - 2.0 * c,
        a - b + 2.0 * c,
        h * (b - c + e * D1),
        0.0,
        h * e * D3,
        h * e * D4,
        h * e * D5,
        h * e * D6,
        h * (e * D7 - c),
    ]
}
