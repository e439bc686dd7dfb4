//! N-DOP-Fe marine biogeochemistry: phosphate, dissolved organic
//! phosphorus and dissolved iron under offline transport.

pub mod forcing;
pub mod grid;
pub mod identifiability;
pub mod kernels;
pub mod optimize;
pub mod par;
pub mod params;
pub mod solvers;
pub mod transport;
