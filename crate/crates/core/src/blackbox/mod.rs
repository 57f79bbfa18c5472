//! Black-box transfer campaign.
//!
//! The attacker only sees the victim through an [`Oracle`]: a frame goes in,
//! a class index comes out. The campaign queries the oracle on a small budget
//! of probe frames, trains a fully connected surrogate on the returned labels,
//! crafts untargeted C-W examples against the surrogate, and replays them
//! against the victim to measure the accuracy drop.

mod campaign;
mod oracle;
mod report;
mod substitute;
mod transfer;

use thiserror::Error;

use crate::attacks::AttackError;
use crate::models::ModelError;
use crate::sigkit::SigError;
use crate::tensor::TensorError;

pub use campaign::{run_campaign, CampaignConfig, DEFAULT_CONFIDENCE, CampaignOutcome, CAMPAIGN_FILES};
pub use oracle::{ModelOracle, Oracle, OracleError};
pub use report::{SnrTransfer, TransferReport, TRANSFER_CSV_HEADER};
pub use substitute::{
    budget_size, collect_substitute_data, select_probes, train_surrogate, QueryRecord, SubstituteDataset,
};
pub use transfer::{craft_and_transfer, craft_and_transfer_with, TransferOutcome};

#[derive(Debug, Error)]
pub enum BlackboxError {
    #[error("invalid campaign configuration: {0}")]
    Config(String),
    #[error("oracle query failed: {0}")]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Attack(#[from] AttackError),
    #[error(transparent)]
    Data(#[from] SigError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("campaign stage '{stage}' failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<BlackboxError>,
    },
}

impl BlackboxError {
    pub(crate) fn at(stage: &'static str) -> impl FnOnce(BlackboxError) -> BlackboxError {
        move |e| BlackboxError::Stage {
            stage,
            source: Box::new(e),
        }
    }
}
