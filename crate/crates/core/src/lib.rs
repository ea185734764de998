pub mod factors;
pub mod jacobian_check;
pub mod liegroup;
pub mod pipeline;
pub mod solver;
pub mod trajectory;
pub mod voxelmap;
