//! C ABI for the `fedgsp` simulator.
//!
//! Conventions:
//!
//! * Every fallible function returns an [`FgStatus`]; results come back
//!   through out-pointers, which are written only on `FG_STATUS_OK`.
//! * On failure, [`fg_last_error`] returns a message for the calling thread.
//! * Handles (`FgConfig`, `FgRun`, `FgPlan`) are opaque; release each with
//!   its `_free` function. Strings returned as `char *` are released with
//!   [`fg_string_free`]. Passing NULL to a `_free` function is a no-op.
//! * Panics never cross the boundary; they surface as `FG_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use fedgsp::config::RunConfig;
use fedgsp::datagen::ClassDistribution;
use fedgsp::grouping::{inter_cluster_grouping, GroupingPlan};
use fedgsp::metrics::{self, CostModelParams, CpdConfig};
use fedgsp::orchestrator::{run_experiment, ExperimentResult, GrowthFunction, GrowthKind};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FgStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    ConfigError = 3,
    RuntimeError = 4,
    OutOfRange = 5,
    BufferTooSmall = 6,
    Panic = 7,
}

pub const FG_GROWTH_LINEAR: u32 = 0;
pub const FG_GROWTH_LOG: u32 = 1;
pub const FG_GROWTH_EXP: u32 = 2;

/// Parsed experiment configuration.
pub struct FgConfig {
    inner: RunConfig,
}

/// A finished experiment: per-round records and final parameters.
pub struct FgRun {
    inner: ExperimentResult,
}

/// A grouping of clients.
pub struct FgPlan {
    inner: GroupingPlan,
}

/// One row of a run's per-round metrics.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct FgRoundRecord {
    pub round: u64,
    pub groups: u64,
    pub sampled_groups: u64,
    pub accuracy: f64,
    pub loss: f64,
    pub median_group_cpd: f64,
    pub t_comp_cum_s: f64,
    pub t_comm_cum_s: f64,
    pub d_comm_cum_mb: f64,
}

/// Cost-model constants and workload.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FgCostParams {
    pub n_calc: f64,
    pub n_aggr: f64,
    pub t_flops: f64,
    pub model_size_mb: f64,
    pub rate_in_mbps: f64,
    pub rate_out_mbps: f64,
    pub samples_per_client: f64,
    pub local_epochs: f64,
    pub num_clients: f64,
    pub kappa: f64,
}

impl From<CostModelParams> for FgCostParams {
    fn from(p: CostModelParams) -> Self {
        Self {
            n_calc: p.n_calc,
            n_aggr: p.n_aggr,
            t_flops: p.t_flops,
            model_size_mb: p.model_size_mb,
            rate_in_mbps: p.rate_in_mbps,
            rate_out_mbps: p.rate_out_mbps,
            samples_per_client: p.samples_per_client,
            local_epochs: p.local_epochs,
            num_clients: p.num_clients,
            kappa: p.kappa,
        }
    }
}

impl From<FgCostParams> for CostModelParams {
    fn from(p: FgCostParams) -> Self {
        Self {
            n_calc: p.n_calc,
            n_aggr: p.n_aggr,
            t_flops: p.t_flops,
            model_size_mb: p.model_size_mb,
            rate_in_mbps: p.rate_in_mbps,
            rate_out_mbps: p.rate_out_mbps,
            samples_per_client: p.samples_per_client,
            local_epochs: p.local_epochs,
            num_clients: p.num_clients,
            kappa: p.kappa,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure {
    status: FgStatus,
    message: String,
}

fn fail<T>(status: FgStatus, message: impl Into<String>) -> Result<T, Failure> {
    Err(Failure { status, message: message.into() })
}

fn set_last_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> FgStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            FgStatus::Ok
        }
        Ok(Err(failure)) => {
            set_last_error(failure.message);
            failure.status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_last_error(format!("internal panic: {msg}"));
            FgStatus::Panic
        }
    }
}

fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    // SAFETY: callers pass either NULL or a pointer obtained from this library
    // that has not been freed.
    unsafe { p.as_ref() }.map_or_else(|| fail(FgStatus::NullPointer, format!("{what} is NULL")), Ok)
}

fn deref_mut<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    // SAFETY: as for `deref`.
    unsafe { p.as_mut() }.map_or_else(|| fail(FgStatus::NullPointer, format!("{what} is NULL")), Ok)
}

fn out<T>(p: *mut T, value: T, what: &str) -> Result<(), Failure> {
    if p.is_null() {
        return fail(FgStatus::NullPointer, format!("{what} is NULL"));
    }
    // SAFETY: non-null and, per the API contract, valid for writes.
    unsafe { p.write(value) };
    Ok(())
}

fn c_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return fail(FgStatus::NullPointer, format!("{what} is NULL"));
    }
    // SAFETY: non-null and NUL-terminated per the API contract.
    unsafe { CStr::from_ptr(p) }
        .to_str()
        .or_else(|_| fail(FgStatus::InvalidArgument, format!("{what} is not valid UTF-8")))
}

fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return fail(FgStatus::NullPointer, format!("{what} is NULL"));
    }
    // SAFETY: non-null and valid for `len` reads per the API contract.
    Ok(unsafe { std::slice::from_raw_parts(p, len) })
}

fn slice_mut<'a, T>(p: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return fail(FgStatus::NullPointer, format!("{what} is NULL"));
    }
    // SAFETY: non-null and valid for `len` writes per the API contract.
    Ok(unsafe { std::slice::from_raw_parts_mut(p, len) })
}

fn out_string(p: *mut *mut c_char, s: String) -> Result<(), Failure> {
    let c = CString::new(s).or_else(|_| fail(FgStatus::RuntimeError, "string contains NUL"))?;
    out(p, c.into_raw(), "out")
}

/// Message of the calling thread's most recent failure, or NULL if the last
/// call succeeded. Free with [`fg_string_free`].
#[no_mangle]
pub extern "C" fn fg_last_error() -> *mut c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null_mut(), |c| c.clone().into_raw()))
}

/// Releases a string returned by this library.
///
/// # Safety
/// `s` must be NULL or a string from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fg_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Library version, statically allocated.
#[no_mangle]
pub extern "C" fn fg_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Parses configuration text in the `key = value` format.
///
/// # Safety
/// `text` must be a NUL-terminated string; `out_config` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fg_config_parse(text: *const c_char, out_config: *mut *mut FgConfig) -> FgStatus {
    guard(|| {
        let text = c_str(text, "text")?;
        let cfg = RunConfig::from_text(text, &[]).or_else(|e| fail(FgStatus::ConfigError, e.to_string()))?;
        out(out_config, Box::into_raw(Box::new(FgConfig { inner: cfg })), "out_config")
    })
}

/// Sets one key, as a `--set key=value` override would.
///
/// # Safety
/// `config` must be a live handle; `key` and `value` NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn fg_config_set(config: *mut FgConfig, key: *const c_char, value: *const c_char) -> FgStatus {
    guard(|| {
        let cfg = deref_mut(config, "config")?;
        let over = format!("{}={}", c_str(key, "key")?, c_str(value, "value")?);
        cfg.inner = RunConfig::from_text(&cfg.inner.to_canonical_text(), &[over])
            .or_else(|e| fail(FgStatus::ConfigError, e.to_string()))?;
        Ok(())
    })
}

/// Canonical text of the configuration.
///
/// # Safety
/// `config` must be a live handle; `out_text` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fg_config_to_text(config: *const FgConfig, out_text: *mut *mut c_char) -> FgStatus {
    guard(|| out_string(out_text, deref(config, "config")?.inner.to_canonical_text()))
}

/// Hex SHA-256 of the canonical text.
///
/// # Safety
/// `config` must be a live handle; `out_hash` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fg_config_hash(config: *const FgConfig, out_hash: *mut *mut c_char) -> FgStatus {
    guard(|| out_string(out_hash, deref(config, "config")?.inner.content_hash()))
}

/// # Safety
/// `config` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fg_config_free(config: *mut FgConfig) {
    if !config.is_null() {
        drop(Box::from_raw(config));
    }
}

/// Runs every configured round in memory.
///
/// # Safety
/// `config` must be a live handle; `out_run` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fg_run_experiment(config: *const FgConfig, out_run: *mut *mut FgRun) -> FgStatus {
    guard(|| {
        let cfg = deref(config, "config")?;
        if out_run.is_null() {
            return fail(FgStatus::NullPointer, "out_run is NULL");
        }
        let res = run_experiment(&cfg.inner.experiment).or_else(|e| fail(FgStatus::RuntimeError, e.to_string()))?;
        out(out_run, Box::into_raw(Box::new(FgRun { inner: res })), "out_run")
    })
}

/// # Safety
/// `run` must be a live handle; `out_count` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fg_run_round_count(run: *const FgRun, out_count: *mut usize) -> FgStatus {
    guard(|| out(out_count, deref(run, "run")?.inner.records.len(), "out_count"))
}

/// Record of round `index + 1`.
///
/// # Safety
/// `run` must be a live handle; `out_record` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fg_run_record(run: *const FgRun, index: usize, out_record: *mut FgRoundRecord) -> FgStatus {
    guard(|| {
        let run = deref(run, "run")?;
        let Some(r) = run.inner.records.get(index) else {
            return fail(FgStatus::OutOfRange, format!("record {index} of {}", run.inner.records.len()));
        };
        let rec = FgRoundRecord {
            round: r.round,
            groups: r.groups,
            sampled_groups: r.sampled_groups,
            accuracy: r.accuracy,
            loss: r.loss,
            median_group_cpd: r.median_group_cpd,
            t_comp_cum_s: r.t_comp_cum_s,
            t_comm_cum_s: r.t_comm_cum_s,
            d_comm_cum_mb: r.d_comm_cum_mb,
        };
        out(out_record, rec, "out_record")
    })
}

/// # Safety
/// `run` must be a live handle; `out_count` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fg_run_param_count(run: *const FgRun, out_count: *mut usize) -> FgStatus {
    guard(|| out(out_count, deref(run, "run")?.inner.final_params.len(), "out_count"))
}

/// Copies the final flat parameter vector into `buf`, which must hold at
/// least [`fg_run_param_count`] values.
///
/// # Safety
/// `run` must be a live handle; `buf` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn fg_run_params(run: *const FgRun, buf: *mut f64, len: usize) -> FgStatus {
    guard(|| {
        let values = &deref(run, "run")?.inner.final_params.values;
        if len < values.len() {
            return fail(FgStatus::BufferTooSmall, format!("need {} values, got {len}", values.len()));
        }
        slice_mut(buf, len, "buf")?[..values.len()].copy_from_slice(values);
        Ok(())
    })
}

/// # Safety
/// `run` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fg_run_free(run: *mut FgRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}

/// Class probability distance between two count vectors of `classes` entries.
///
/// # Safety
/// `a` and `b` must be valid for `classes` reads; `out_cpd` writable.
#[no_mangle]
pub unsafe extern "C" fn fg_cpd(a: *const u64, b: *const u64, classes: usize, sigma: f64, out_cpd: *mut f64) -> FgStatus {
    guard(|| {
        if !(sigma.is_finite() && sigma > 0.0) {
            return fail(FgStatus::InvalidArgument, format!("sigma must be positive, got {sigma}"));
        }
        let a = ClassDistribution::new(slice(a, classes, "a")?.to_vec());
        let b = ClassDistribution::new(slice(b, classes, "b")?.to_vec());
        let v = metrics::cpd(&a, &b, &CpdConfig { sigma }).or_else(|e| fail(FgStatus::InvalidArgument, e.to_string()))?;
        out(out_cpd, v, "out_cpd")
    })
}

/// Group count `f(round)` of a growth schedule (`FG_GROWTH_*`), saturating
/// at `UINT64_MAX`.
///
/// # Safety
/// `out_groups` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fg_growth_eval(kind: u32, alpha: f64, beta: u64, round: u64, out_groups: *mut u64) -> FgStatus {
    guard(|| {
        let kind = match kind {
            FG_GROWTH_LINEAR => GrowthKind::Linear,
            FG_GROWTH_LOG => GrowthKind::Log,
            FG_GROWTH_EXP => GrowthKind::Exp,
            other => return fail(FgStatus::InvalidArgument, format!("unknown growth kind {other}")),
        };
        let g = GrowthFunction { kind, alpha, beta };
        g.validate().or_else(|e| fail(FgStatus::InvalidArgument, e))?;
        if round == 0 {
            return fail(FgStatus::InvalidArgument, "rounds start at 1");
        }
        out(out_groups, g.eval(round), "out_groups")
    })
}

/// Default hardware constants with the given workload.
///
/// # Safety
/// `out_params` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fg_cost_params_default(
    samples_per_client: f64,
    local_epochs: f64,
    num_clients: f64,
    kappa: f64,
    out_params: *mut FgCostParams,
) -> FgStatus {
    guard(|| {
        let p = CostModelParams::with_workload(samples_per_client, local_epochs, num_clients, kappa);
        out(out_params, p.into(), "out_params")
    })
}

fn cost_params(p: *const FgCostParams) -> Result<CostModelParams, Failure> {
    let p: CostModelParams = (*deref(p, "params")?).into();
    p.validate().or_else(|e| fail(FgStatus::InvalidArgument, e))?;
    Ok(p)
}

/// Total computation time over `rounds` rounds with group counts `groups`.
///
/// # Safety
/// `groups` valid for `rounds` reads; `params` readable; `out_seconds` writable.
#[no_mangle]
pub unsafe extern "C" fn fg_t_comp(
    groups: *const f64,
    rounds: usize,
    params: *const FgCostParams,
    out_seconds: *mut f64,
) -> FgStatus {
    guard(|| {
        let p = cost_params(params)?;
        out(out_seconds, metrics::t_comp(slice(groups, rounds, "groups")?, &p), "out_seconds")
    })
}

/// Total communication time over `rounds` rounds.
///
/// # Safety
/// `params` readable; `out_seconds` writable.
#[no_mangle]
pub unsafe extern "C" fn fg_t_comm(rounds: f64, params: *const FgCostParams, out_seconds: *mut f64) -> FgStatus {
    guard(|| {
        let p = cost_params(params)?;
        out(out_seconds, metrics::t_comm(rounds, &p), "out_seconds")
    })
}

/// Total communicated megabytes over `rounds` rounds.
///
/// # Safety
/// `params` readable; `out_mb` writable.
#[no_mangle]
pub unsafe extern "C" fn fg_d_comm(rounds: f64, params: *const FgCostParams, out_mb: *mut f64) -> FgStatus {
    guard(|| {
        let p = cost_params(params)?;
        out(out_mb, metrics::d_comm(rounds, &p), "out_mb")
    })
}

/// Inter-cluster grouping of `clients` clients whose class counts are laid
/// out row-major in `counts` (`clients * classes` values).
///
/// # Safety
/// `counts` valid for `clients * classes` reads; `out_plan` writable.
#[no_mangle]
pub unsafe extern "C" fn fg_group_clients(
    counts: *const u64,
    clients: usize,
    classes: usize,
    groups: usize,
    round: u64,
    seed: u64,
    out_plan: *mut *mut FgPlan,
) -> FgStatus {
    guard(|| {
        let Some(n) = clients.checked_mul(classes) else {
            return fail(FgStatus::InvalidArgument, "clients * classes overflows");
        };
        if classes == 0 {
            return fail(FgStatus::InvalidArgument, "classes must be positive");
        }
        let counts = slice(counts, n, "counts")?;
        let dists: Vec<ClassDistribution> = counts.chunks(classes).map(|c| ClassDistribution::new(c.to_vec())).collect();
        if out_plan.is_null() {
            return fail(FgStatus::NullPointer, "out_plan is NULL");
        }
        let outcome =
            inter_cluster_grouping(&dists, groups, round, seed).or_else(|e| fail(FgStatus::InvalidArgument, e.to_string()))?;
        out(out_plan, Box::into_raw(Box::new(FgPlan { inner: outcome.plan })), "out_plan")
    })
}

/// # Safety
/// `plan` must be a live handle; `out_count` writable.
#[no_mangle]
pub unsafe extern "C" fn fg_plan_group_count(plan: *const FgPlan, out_count: *mut usize) -> FgStatus {
    guard(|| out(out_count, deref(plan, "plan")?.inner.group_count(), "out_count"))
}

/// # Safety
/// `plan` must be a live handle; `out_len` writable.
#[no_mangle]
pub unsafe extern "C" fn fg_plan_group_len(plan: *const FgPlan, group: usize, out_len: *mut usize) -> FgStatus {
    guard(|| {
        let plan = &deref(plan, "plan")?.inner;
        let Some(g) = plan.groups.get(group) else {
            return fail(FgStatus::OutOfRange, format!("group {group} of {}", plan.group_count()));
        };
        out(out_len, g.len(), "out_len")
    })
}

/// Copies group `group`'s client ids, in training order, into `buf`.
///
/// # Safety
/// `plan` must be a live handle; `buf` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn fg_plan_group(plan: *const FgPlan, group: usize, buf: *mut usize, len: usize) -> FgStatus {
    guard(|| {
        let plan = &deref(plan, "plan")?.inner;
        let Some(g) = plan.groups.get(group) else {
            return fail(FgStatus::OutOfRange, format!("group {group} of {}", plan.group_count()));
        };
        if len < g.len() {
            return fail(FgStatus::BufferTooSmall, format!("need {} ids, got {len}", g.len()));
        }
        slice_mut(buf, len, "buf")?[..g.len()].copy_from_slice(g);
        Ok(())
    })
}

/// JSON form `{"round":..,"groups":[[..],..],"unassigned":[..]}`.
///
/// # Safety
/// `plan` must be a live handle; `out_json` writable.
#[no_mangle]
pub unsafe extern "C" fn fg_plan_to_json(plan: *const FgPlan, out_json: *mut *mut c_char) -> FgStatus {
    guard(|| {
        let plan = &deref(plan, "plan")?.inner;
        out_string(out_json, serde_json::to_string(plan).or_else(|e| fail(FgStatus::RuntimeError, e.to_string()))?)
    })
}

/// # Safety
/// `plan` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fg_plan_free(plan: *mut FgPlan) {
    if !plan.is_null() {
        drop(Box::from_raw(plan));
    }
}
