use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const LAMBDA_REC: f64 = 5.0;
pub const LAMBDA_ADV: f64 = 4.0;
pub const LAMBDA_FEAT: f64 = 4.0;
pub const LAMBDA_CODEBOOK: f64 = 1.0;
pub const LAMBDA_COMMIT: f64 = 1.0;
pub const LAMBDA_SEM: f64 = 10.0;

/// Raw codec loss terms. `adv` and `feat` come from an external
/// discriminator and default to zero.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub rec: f64,
    pub adv: f64,
    pub feat: f64,
    pub codebook: f64,
    pub commit: f64,
    pub sem: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub terms: LossTerms,
    pub total: f64,
}

pub fn total_loss(terms: LossTerms) -> Result<LossReport> {
    let named = [
        ("rec", terms.rec),
        ("adv", terms.adv),
        ("feat", terms.feat),
        ("codebook", terms.codebook),
        ("commit", terms.commit),
        ("sem", terms.sem),
    ];
    for (name, v) in named {
        if !v.is_finite() || v < 0.0 {
            return Err(Error::invalid(format!("loss term {name} = {v} must be finite and nonnegative")));
        }
    }
    let total = LAMBDA_REC * terms.rec
        + LAMBDA_ADV * terms.adv
        + LAMBDA_FEAT * terms.feat
        + LAMBDA_CODEBOOK * terms.codebook
        + LAMBDA_COMMIT * terms.commit
        + LAMBDA_SEM * terms.sem;
    Ok(LossReport { terms, total })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights() {
        let ones = LossTerms { rec: 1.0, adv: 1.0, feat: 1.0, codebook: 1.0, commit: 1.0, sem: 1.0 };
        assert_eq!(total_loss(ones).unwrap().total, 25.0);
        let no_gan = LossTerms { adv: 0.0, feat: 0.0, ..ones };
        assert_eq!(total_loss(no_gan).unwrap().total, 17.0);
        assert_eq!(total_loss(LossTerms::default()).unwrap().total, 0.0);
        assert!(total_loss(LossTerms { sem: -1.0, ..ones }).is_err());
        assert!(total_loss(LossTerms { rec: f64::NAN, ..ones }).is_err());
    }
}
