//! Attack/defense test bench for HVAC power tracking: a single-zone RC plant,
//! a receding-horizon tracking controller, a moment-based stealthy sensor
//! attack, a dualized resilient controller and APAR stealth checks.

pub mod apar;
pub mod attack;
pub mod io;
pub mod model;
pub mod mpc;
pub mod opt;
pub mod resilient;
pub mod sim;
