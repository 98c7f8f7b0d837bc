use super::{evaluate_cohort, Level, MetricsReport};
use crate::dataset::PreparedSet;
use crate::error::{Error, Result};
use crate::model::{Model, ModelWeights, NetworkConfig};
use crate::signal_io::Site;
use crate::train::{class_weights, fit, TrainConfig};

/// Patient-disjoint train/validation/test sets.
#[derive(Debug, Clone)]
pub struct Splits {
    pub train: PreparedSet,
    pub val: PreparedSet,
    pub test: PreparedSet,
}

impl Splits {
    pub fn filter_site(&self, site: Site) -> Self {
        Self {
            train: self.train.filter_site(site),
            val: self.val.filter_site(site),
            test: self.test.filter_site(site),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ProtocolConfig {
    pub network: NetworkConfig,
    pub train: TrainConfig,
    pub init_seed: u64,
    /// Pretrained trunk to start from; the head is replaced.
    pub init_weights: Option<ModelWeights>,
}

#[derive(Debug, Clone)]
pub struct SiteReport {
    /// `None` for the model trained on every site.
    pub site: Option<Site>,
    pub report: MetricsReport,
    pub epochs: usize,
}

fn train_and_test(splits: &Splits, cfg: &ProtocolConfig) -> Result<(MetricsReport, usize)> {
    let mut model = Model::new(cfg.network.clone(), cfg.init_seed)?;
    if let Some(w) = &cfg.init_weights {
        model.load_trunk(w)?;
        model.replace_head(cfg.network.num_classes)?;
    }
    let weights = class_weights(&splits.train.labels())?;
    let out = fit(model, &splits.train, &splits.val, &cfg.train, &weights)?;
    let report = evaluate_cohort(&out.best, &splits.test, Level::Patient)?;
    Ok((report, out.history.len()))
}

/// Trains a fresh model on one site's recordings (or all sites for
/// `None`) and reports patient-level metrics on that site's test
/// recordings. The patient split is shared across sites.
pub fn per_site_protocol(
    splits: &Splits,
    site: Option<Site>,
    cfg: &ProtocolConfig,
) -> Result<SiteReport> {
    let restricted;
    let used = match site {
        Some(s) => {
            restricted = splits.filter_site(s);
            if restricted.train.is_empty()
                || restricted.val.is_empty()
                || restricted.test.is_empty()
            {
                return Err(Error::EmptySite(s));
            }
            &restricted
        }
        None => splits,
    };
    let (report, epochs) = train_and_test(used, cfg)?;
    log::info!(
        "site {}: accuracy {:.4} auroc {:.4}",
        site.map_or("all", Site::as_str),
        report.accuracy,
        report.auroc
    );
    Ok(SiteReport {
        site,
        report,
        epochs,
    })
}

/// The combined model followed by each valve site present in the
/// training split.
pub fn ablate_sites(splits: &Splits, cfg: &ProtocolConfig) -> Result<Vec<SiteReport>> {
    let mut reports = vec![per_site_protocol(splits, None, cfg)?];
    for site in Site::VALVES {
        if splits.train.items.iter().any(|i| i.site == site) {
            reports.push(per_site_protocol(splits, Some(site), cfg)?);
        }
    }
    Ok(reports)
}
