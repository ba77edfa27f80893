//! Built-in models. Each is kept as model-file text so the parser is the
//! single way models come into existence.

use super::{parse_model, ModelSpec};

/// Names accepted by [`by_name`].
pub const NAMES: &[&str] = &[
    "section4",
    "section4-half",
    "two-state",
    "zero",
    "monotone",
    "congestion",
    "exit",
];

const SECTION4: &str = "\
name = section4
d = 3
T = 1
actions = interval(0, 1, 101)
Q[1][2] = u
Q[1][1] = auto
Q[2][3] = if(t < 1/3, 1, if(t < 2/3, -3*t + 2, 0))
Q[2][2] = auto
g0[1] = -u^2
g0[2] = 0
g0[3] = 0
g1[1] = 0
g1[2] = 0
g1[3] = 0
";

/// The three-state nonexistence example: state 1 leaks to state 2 at the
/// controlled rate `u`, state 2 drains into the absorbing state 3 at the
/// rate `rho(t)`, and control costs `u^2`.
pub fn section4() -> ModelSpec {
    section4_with_grid(101)
}

/// [`section4`] with `count` uniform action points on `[0, 1]`.
pub fn section4_with_grid(count: usize) -> ModelSpec {
    let text = SECTION4.replace("interval(0, 1, 101)", &format!("interval(0, 1, {count})"));
    parse_model(&text).expect("built-in model parses")
}

/// Variant whose control cost is `u^2 / 2`, the form that appears in the
/// displayed Bellman maximand of the example.
pub fn section4_half() -> ModelSpec {
    let text = SECTION4
        .replace("name = section4", "name = section4-half")
        .replace("g0[1] = -u^2", "g0[1] = -u^2/2");
    parse_model(&text).expect("built-in model parses")
}

pub fn section4_m0() -> Vec<f64> {
    vec![1.0, 0.0, 0.0]
}

/// `(e^{-1/3}, 1 - e^{-1/3}, 0)`, the distribution reached from
/// [`section4_m0`] under [`section4_utilde`]: state 1 keeps
/// `exp(-∫u) = e^{-1/3}`.
pub fn section4_target() -> Vec<f64> {
    let e = (-1.0f64 / 3.0).exp();
    vec![e, 1.0 - e, 0.0]
}

/// Drain rate of state 2 in the example.
pub fn section4_rho(t: f64) -> f64 {
    if t < 1.0 / 3.0 {
        1.0
    } else if t < 2.0 / 3.0 {
        -3.0 * t + 2.0
    } else {
        0.0
    }
}

/// The unique control steering `section4_m0` to `section4_target`.
pub fn section4_utilde(t: f64) -> f64 {
    if t < 2.0 / 3.0 {
        0.0
    } else {
        1.0
    }
}

/// Switch time of [`section4_utilde`].
pub const SECTION4_SWITCH: f64 = 2.0 / 3.0;

const TWO_STATE: &str = "\
name = two-state
d = 2
T = 1
actions = [0, 1]
Q[1][2] = u
Q[1][1] = auto
g[1] = 0
g[2] = 0
sigma[1] = 0
sigma[2] = 1
";

/// Two states, controlled jump `1 -> 2` at rate `u in {0, 1}`, no running
/// payoff and terminal reward on state 2. Its value from state 1 is
/// `1 - e^{-(T - t)}`.
pub fn two_state() -> ModelSpec {
    parse_model(TWO_STATE).expect("built-in model parses")
}

/// `dim` states with identically zero rates and running payoff.
pub fn zero_rates(dim: usize) -> ModelSpec {
    let mut text = format!("name = zero\nd = {dim}\nT = 1\nactions = [0, 1]\n");
    for i in 1..=dim {
        text.push_str(&format!("g0[{i}] = 0\ng1[{i}] = 0\n"));
    }
    for i in 1..=dim {
        text.push_str(&format!("sigma[{i}] = {}\n", (i - 1) as f64 / dim as f64));
    }
    parse_model(&text).expect("built-in model parses")
}

const MONOTONE: &str = "\
name = monotone
d = 2
T = 1
actions = interval(0, 1, 21)
Q[1][2] = u
Q[1][1] = auto
Q[2][1] = 0.5
Q[2][2] = auto
g0[1] = -u^2/2
g0[2] = 0
g1[1] = -m1
g1[2] = -m2
sigma[1] = 0
sigma[2] = 0.6
";

/// Rates that do not read the distribution, a strictly concave action cost
/// and the strictly monotone coupling `g1_i(m) = -m_i`.
pub fn monotone() -> ModelSpec {
    parse_model(MONOTONE).expect("built-in model parses")
}

const CONGESTION: &str = "\
name = congestion
d = 3
T = 1
actions = interval(0, 1, 11)
Q[1][2] = u*(1 + m3)
Q[1][3] = 0.2
Q[1][1] = auto
Q[2][3] = 0.5 + 0.5*u*m1
Q[2][1] = 0.1
Q[2][2] = auto
Q[3][1] = 0.3*(1 + m2)
Q[3][3] = auto
g[1] = -u^2/2 - m1
g[2] = -0.5*u - m2^2
g[3] = 1 - m3 + 0.2*u*t
sigma[1] = -m1
sigma[2] = 0.5
sigma[3] = 1 - m3
";

/// Three states whose rates and payoffs all read the distribution.
pub fn congestion() -> ModelSpec {
    parse_model(CONGESTION).expect("built-in model parses")
}

/// Per-unit-rate price of leaving state 1 in [`exit`].
pub const EXIT_COST: f64 = 0.4;

const EXIT: &str = "\
name = exit
d = 2
T = 1
actions = [0, 1]
Q[1][2] = u
Q[1][1] = auto
Q[2][1] = 0.5
Q[2][2] = auto
g0[1] = -0.4*u
g0[2] = 0
g1[1] = -m1
g1[2] = -m2
sigma[1] = -0.2
sigma[2] = 0.2
";

/// Players in state 1 may leave at rate `u ∈ {0, 1}` for the price
/// [`EXIT_COST`]`·u`, return at rate 1/2, and pay their own state's
/// occupancy (strictly monotone coupling). Exiting is optimal exactly when
/// `φ2 − φ1 ≥ EXIT_COST`.
pub fn exit() -> ModelSpec {
    parse_model(EXIT).expect("built-in model parses")
}

pub fn by_name(name: &str) -> Option<ModelSpec> {
    Some(match name {
        "section4" => section4(),
        "section4-half" => section4_half(),
        "two-state" => two_state(),
        "zero" => zero_rates(3),
        "monotone" => monotone(),
        "congestion" => congestion(),
        "exit" => exit(),
        _ => return None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn target_keeps_mass_in_state_one() {
        assert!((section4_target()[0] - 0.716531).abs() < 1e-6);
        let s: f64 = section4_target().iter().sum();
        assert!((s - 1.0).abs() < 1e-15);
    }

    #[test]
    fn steering_control_values() {
        assert_eq!(section4_utilde(0.5), 0.0);
        assert_eq!(section4_utilde(0.9), 1.0);
    }

    #[test]
    fn rho_is_continuous_at_one_third() {
        let third = 1.0 / 3.0;
        assert_eq!(section4_rho(third - 1e-12), 1.0);
        assert!((section4_rho(third) - 1.0).abs() < 1e-15);
        assert!((-3.0 * third + 2.0 - 1.0f64).abs() < 1e-15);
        let model = section4();
        let rate = model.rates[1][2].eval_at(0.5, &[1.0, 0.0, 0.0], 0.0).unwrap();
        assert_eq!(rate, section4_rho(0.5));
    }

    #[test]
    fn every_name_resolves() {
        for n in NAMES {
            assert!(by_name(n).is_some(), "{n}");
        }
        assert!(by_name("nope").is_none());
    }
}
