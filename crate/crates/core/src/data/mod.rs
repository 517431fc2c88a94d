//! Corpus records, label binning, speaker-independent splits and the
//! synthetic confounded corpus.

mod corpus;
mod labels;
mod splits;
mod synthetic;

pub use corpus::{
    assign_labels, decode_feature_file, encode_feature_file, filter_by_duration, load_samples, manifest_to_string,
    read_feature_file, read_manifest, stress_population_mean, ConfoundValue, FeatureSource, LoadOptions, Sample,
    SpeakerItem, Spontaneity, Utterance, FEATURE_MAGIC,
};
pub use labels::{
    adjusted_pss, bin_five_point_rating, bin_muse_rating, bin_rating, bin_stress, duration_in_range, LabelBins,
    RatingScale, HIGH, LOW, MAX_DURATION_S, MID, MIN_DURATION_S,
};
pub use splits::{
    compact_confound_levels, make_speaker_independent_folds, overlapping_speakers, speaker_holdouts, partition_by_confound,
    split_speakers, train_validation_plan, Role, SplitPlan, Splits, VALIDATION_FRACTION,
};
pub use synthetic::{generate_synthetic_corpus, vocab, SyntheticConfig, SyntheticCorpus, STRESS_CENTER, STRESS_STEP};
