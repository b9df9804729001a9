//! Non-equilibrium skew (NES) model of asset returns.
//!
//! Log-returns follow an overdamped Langevin equation whose stationary
//! density is a Gaussian mixture. The crate provides the implied potential,
//! escape rates, the SUSY/perturbative first excited state, real-measure and
//! risk-neutral return densities, option pricing and calibration, and a
//! simulation harness used for validation.

pub mod calibrate;
pub mod dynsim;
pub mod error;
pub mod gaussmix;
pub mod nesdist;
pub mod passage;
pub mod potential;
pub mod pricing;
pub mod quad;
pub mod special;
pub mod susy;

pub use error::{NesError, Result};
pub use gaussmix::{CentralStats, GaussianMixture};
pub use potential::{CriticalKind, CriticalPoint, GroundState, NesParams, Potential, Shape, StationaryDensity};
pub use passage::{escape_rate, passage_time_quadrature, passage_time_saddle, EscapeMethod, EscapeResult};
pub use susy::{
    first_excited_state, lpt_step, transition_density_two_term, FirstExcitedState, LptFirstOrder, PartnerGroundState,
    TwoTermDensity,
};
pub use nesdist::{
    real_density, risk_neutral_density, solve_xi_prime, tilt_b, time_dependent_moments, MeasureDensity, MeasureKind,
    RateSpec, TimeMoments, XiSolution,
};
pub use pricing::{
    bs_delta_from_implied, bs_price, implied_vol, nes_option_price, price_by_quadrature, MarketEnv, NesDividends,
    NesPricer, OptionKind, OptionQuote,
};
pub use calibrate::{
    calibrate, implied_potential_report, synthetic_quotes, Bounds, CalibConfig, CalibrationResult, ImpliedPotentialReport, Regime,
};
pub use dynsim::{
    empirical_first_passage, instanton_closed_form, instanton_ode, simulate_paths, CubicPotential, PassageEstimate,
    SimConfig, Trajectory,
};
