pub mod audit;
pub mod engine;
pub mod json;
pub mod logic;
pub mod normalize;
pub mod record;
pub mod rules;
pub mod run;
pub mod runconfig;
pub mod schema;
pub mod sources;
