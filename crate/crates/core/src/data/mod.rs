//! Synthetic multimodal cohorts, max-abs scaling and volume files.

mod cohort;
pub mod io;
mod volume;

pub use cohort::{
    generate_cohort, load_cohort, save_cohort, subject_batch, Cohort, CohortSpec, Group, Subject,
    SubjectBatch,
};
pub use volume::{gaussian_smooth, maxabs_scale, Volume};
