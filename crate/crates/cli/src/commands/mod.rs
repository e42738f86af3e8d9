pub mod evaluate;
pub mod gen_world;
pub mod hindsight;
pub mod lift;
pub mod plot;
