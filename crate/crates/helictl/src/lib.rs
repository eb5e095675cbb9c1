//! Small-helicopter flight dynamics with a robust attitude inner loop and a
//! model-free prescribed-performance position loop.

pub mod dynamics;
pub mod hinf;
pub mod linearize;
pub mod matio;
pub mod oracles;
pub mod outer_loop;
pub mod params;
pub mod scenario;
