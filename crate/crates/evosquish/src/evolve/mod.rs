//! Evolutionary synthesis: genetic encodings, environmental constraints,
//! offspring sampling, and the generation loop.

mod encoding;
mod env;
mod run;
mod synth;

pub use encoding::{
    derive_encoding, derive_encoding_with, EncodingModel, GeneticEncoding, PROB_FLOOR,
};
pub use env::EnvironmentConfig;
pub use run::{
    generation_dir, load_generation, read_evolution_csv, run_evolution, write_evolution_csv,
    GenerationRecord, EVOLUTION_CSV_HEADER,
};
pub use synth::{
    synthesize_offspring, synthesize_offspring_traced, Offspring, SynthesisTrace,
};
