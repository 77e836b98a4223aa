//! Background refits of the served audit model.

use std::sync::{Arc, Mutex, RwLock};

use chrono::{DateTime, NaiveDate, Utc};
use crowdkwh_core::audit::{fit_stepwise_aic, LinearModel, DEFAULT_MAX_TERMS};
use crowdkwh_core::pipeline::{prepare, AnalysisParams, OutcomeSpec};
use crowdkwh_store::Snapshot;
use serde::Serialize;

/// A fitted model together with what it was fitted on.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ServedModel {
    pub model: LinearModel,
    pub fitted_at: DateTime<Utc>,
    /// Last day of the 30-day outcome window.
    pub outcome_as_of: NaiveDate,
    pub n_users: usize,
    pub job: u64,
}

pub type Fitter = dyn Fn(&Snapshot) -> Result<ServedModel, String> + Send + Sync;

/// Fits the stepwise model on a snapshot, with each user's 30-day
/// deviation ending at the last metered day as the outcome.
pub fn fit_snapshot(snapshot: &Snapshot, max_terms: usize) -> Result<ServedModel, String> {
    let as_of = snapshot
        .readings
        .iter()
        .map(|r| r.interval_start.date_naive())
        .max()
        .ok_or("no meter data yet")?;
    let params = AnalysisParams { outcome: OutcomeSpec::Delta30 { as_of }, max_terms, ..AnalysisParams::default() };
    let prepared = prepare(&snapshot.to_dataset(), &params).map_err(|e| e.to_string())?;
    if prepared.z.n_rows() < 3 {
        return Err(format!("need at least 3 users with answers and meter data, have {}", prepared.z.n_rows()));
    }
    let model = fit_stepwise_aic(&prepared.z, &prepared.y, max_terms).map_err(|e| e.to_string())?;
    Ok(ServedModel { model, fitted_at: snapshot.as_of, outcome_as_of: as_of, n_users: prepared.z.n_rows(), job: 0 })
}

pub fn default_fitter() -> Arc<Fitter> {
    Arc::new(|s: &Snapshot| fit_snapshot(s, DEFAULT_MAX_TERMS))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct RefreshStatus {
    pub running: bool,
    /// Id of the running or most recent job.
    pub job: u64,
    pub last_error: Option<String>,
    pub last_finished_at: Option<DateTime<Utc>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct RefreshTicket {
    pub job: u64,
    /// True when the request joined a refresh that was already running.
    pub coalesced: bool,
}

#[derive(Default)]
pub struct ModelSlot {
    served: RwLock<Option<Arc<ServedModel>>>,
    status: Mutex<RefreshStatus>,
}

impl ModelSlot {
    pub fn current(&self) -> Option<Arc<ServedModel>> {
        self.served.read().unwrap_or_else(|e| e.into_inner()).clone()
    }

    pub fn status(&self) -> RefreshStatus {
        self.status.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }

    /// Claims the refresh slot, or returns the running job's id as `Err`
    /// when one is already in flight.
    pub fn begin(&self) -> Result<u64, u64> {
        let mut st = self.status.lock().unwrap_or_else(|e| e.into_inner());
        if st.running {
            return Err(st.job);
        }
        st.running = true;
        st.job += 1;
        Ok(st.job)
    }

    /// Publishes a finished job. The served model changes only on success.
    pub fn finish(&self, job: u64, result: Result<ServedModel, String>, at: DateTime<Utc>) {
        let error = match result {
            Ok(mut m) => {
                m.job = job;
                *self.served.write().unwrap_or_else(|e| e.into_inner()) = Some(Arc::new(m));
                None
            }
            Err(e) => {
                tracing::error!(job, error = %e, "model refresh failed; keeping the previous model");
                Some(e)
            }
        };
        let mut st = self.status.lock().unwrap_or_else(|e| e.into_inner());
        st.running = false;
        st.last_error = error;
        st.last_finished_at = Some(at);
    }
}
