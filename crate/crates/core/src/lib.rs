//! Discrete-event simulator for fibre-optic sensing networks fitted with
//! fibre sensing control devices (FSCDs) and a three-layer real-time sensing
//! control plane.

pub mod control;
pub mod fscd;
pub mod otdr;
pub mod par;
pub mod plant;
pub mod scenario;
pub mod sim;
pub mod sop;
