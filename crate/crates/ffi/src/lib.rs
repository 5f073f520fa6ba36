//! C interface to the `coalescent` library.
//!
//! Objects are exposed as opaque handles created by `coal_*` constructors and
//! released with the matching `*_free` function. Every fallible call returns a
//! [`CoalStatus`]; on failure the message is available from
//! [`coal_last_error`] on the same thread until the next failing call.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use coalescent::data::{self, CsvOptions};
use coalescent::greedy::GreedyVariant;
use coalescent::learning::{self, FitConfig, Inference};
use coalescent::smc::{self, Proposal, SmcConfig};
use coalescent::{kernels, DataMatrix, Error, Genealogy, KernelParams, ModelKind};

/// Status codes returned by every fallible function.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CoalStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Argument = 3,
    Data = 4,
    Structural = 5,
    Numeric = 6,
    Degeneracy = 7,
    Config = 8,
    Unsupported = 9,
    Io = 10,
    Ingestion = 11,
    Unrestorable = 12,
    Panic = 99,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CoalModel {
    /// Pick from the column types: all real is Brownian, all categorical is multinomial.
    Auto = 0,
    Brownian = 1,
    Multinomial = 2,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CoalGreedy {
    MaxProb = 0,
    MinDuration = 1,
    Rate1 = 2,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CoalProposal {
    PriorPrior = 0,
    PriorPost = 1,
    PostPost = 2,
}

/// A data matrix. Missing cells read back as NaN.
pub struct CoalData(DataMatrix);

/// A fitted tree together with the parameters it was fitted under.
pub struct CoalTree {
    genealogy: Genealogy,
    params: KernelParams,
    log_marginal: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> CoalStatus {
    match err {
        Error::Argument(_) => CoalStatus::Argument,
        Error::Data { .. } => CoalStatus::Data,
        Error::Structural(_) | Error::TimeOrder { .. } => CoalStatus::Structural,
        Error::Numeric(_) | Error::Solver(_) | Error::DegenerateLikelihood { .. } => CoalStatus::Numeric,
        Error::Degeneracy { .. } => CoalStatus::Degeneracy,
        Error::Config(_) => CoalStatus::Config,
        Error::Unsupported(_) | Error::UndefinedMetric(_) => CoalStatus::Unsupported,
        Error::Io(_) => CoalStatus::Io,
        Error::Csv(_) => CoalStatus::Ingestion,
        Error::Unrestorable { .. } => CoalStatus::Unrestorable,
    }
}

struct Fail(CoalStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), format!("{}: {e}", e.kind()))
    }
}

fn null(what: &str) -> Fail {
    Fail(CoalStatus::NullPointer, format!("null pointer: {what}"))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> CoalStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CoalStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("panic inside library call".into());
            CoalStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(CoalStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

unsafe fn opt_str_arg<'a>(p: *const c_char, what: &str) -> Result<Option<&'a str>, Fail> {
    if p.is_null() {
        Ok(None)
    } else {
        str_arg(p, what).map(Some)
    }
}

unsafe fn out_ptr<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn in_ref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

fn resolve_model(data: &DataMatrix, model: CoalModel) -> Result<ModelKind, Fail> {
    match model {
        CoalModel::Brownian => Ok(ModelKind::Brownian),
        CoalModel::Multinomial => Ok(ModelKind::Multinomial),
        CoalModel::Auto if data.is_all_real() => Ok(ModelKind::Brownian),
        CoalModel::Auto if data.is_all_categorical() => Ok(ModelKind::Multinomial),
        CoalModel::Auto => Err(Error::Unsupported("mixed real and categorical columns".into()).into()),
    }
}

fn boxed<T>(v: T) -> *mut T {
    Box::into_raw(Box::new(v))
}

/// Message of the last failing call on this thread, or NULL. The pointer is
/// valid until the next failing call on this thread.
#[no_mangle]
pub extern "C" fn coal_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn coal_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a CSV file with a header row.
///
/// `schema` is NULL for inference, or e.g. `"real"`, `"cat:3"`, or a
/// comma-separated list with one entry per column. `na_token` is NULL for `"NA"`.
///
/// # Safety
/// String arguments must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn coal_data_load_csv(
    path: *const c_char,
    schema: *const c_char,
    na_token: *const c_char,
    out: *mut *mut CoalData,
) -> CoalStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let path = str_arg(path, "path")?;
        let mut opts = CsvOptions::default();
        if let Some(s) = opt_str_arg(schema, "schema")? {
            opts.schema = Some(data::parse_schema(s)?);
        }
        if let Some(na) = opt_str_arg(na_token, "na_token")? {
            opts.na_token = na.to_string();
        }
        *out = boxed(CoalData(data::load_csv(path, &opts)?));
        Ok(())
    })
}

/// Builds a real-valued matrix from `rows * cols` row-major values; NaN marks a missing cell.
///
/// # Safety
/// `values` must point to `rows * cols` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn coal_data_from_real(
    values: *const f64,
    rows: usize,
    cols: usize,
    out: *mut *mut CoalData,
) -> CoalStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        if values.is_null() {
            return Err(null("values"));
        }
        let len = rows
            .checked_mul(cols)
            .ok_or_else(|| Fail(CoalStatus::Argument, "rows * cols overflows".into()))?;
        let flat = std::slice::from_raw_parts(values, len);
        let cells = flat
            .chunks(cols.max(1))
            .take(rows)
            .map(|r| r.iter().map(|&v| (!v.is_nan()).then_some(v)).collect())
            .collect();
        let names = (0..cols).map(|c| format!("x{c}")).collect();
        let kinds = vec![coalescent::ColumnKind::Real; cols];
        *out = boxed(CoalData(DataMatrix::new(names, kinds, cells)?));
        Ok(())
    })
}

/// Builds a categorical matrix with `k` categories per column from row-major
/// codes in `0..k`; a negative code marks a missing cell.
///
/// # Safety
/// `codes` must point to `rows * cols` ints; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn coal_data_from_categorical(
    codes: *const i32,
    rows: usize,
    cols: usize,
    k: usize,
    out: *mut *mut CoalData,
) -> CoalStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        if codes.is_null() {
            return Err(null("codes"));
        }
        let len = rows
            .checked_mul(cols)
            .ok_or_else(|| Fail(CoalStatus::Argument, "rows * cols overflows".into()))?;
        let flat = std::slice::from_raw_parts(codes, len);
        let cells = flat
            .chunks(cols.max(1))
            .take(rows)
            .map(|r| r.iter().map(|&v| (v >= 0).then_some(v as f64)).collect())
            .collect();
        let names = (0..cols).map(|c| format!("x{c}")).collect();
        let kinds = vec![coalescent::ColumnKind::Categorical(k); cols];
        *out = boxed(CoalData(DataMatrix::new(names, kinds, cells)?));
        Ok(())
    })
}

/// Number of rows, or 0 for NULL.
///
/// # Safety
/// `data` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn coal_data_rows(data: *const CoalData) -> usize {
    data.as_ref().map_or(0, |d| d.0.n_rows())
}

/// Number of columns, or 0 for NULL.
///
/// # Safety
/// `data` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn coal_data_cols(data: *const CoalData) -> usize {
    data.as_ref().map_or(0, |d| d.0.n_cols())
}

/// Reads one cell; missing cells give NaN. Categorical cells give the code.
///
/// # Safety
/// `data` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn coal_data_get(data: *const CoalData, row: usize, col: usize, out: *mut f64) -> CoalStatus {
    guard(|| {
        let d = &in_ref(data, "data")?.0;
        let out = out_ptr(out, "out")?;
        if row >= d.n_rows() || col >= d.n_cols() {
            return Err(Error::Argument(format!("cell ({row}, {col}) out of range")).into());
        }
        *out = d.get(row, col).unwrap_or(f64::NAN);
        Ok(())
    })
}

/// # Safety
/// `data` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn coal_data_free(data: *mut CoalData) {
    if !data.is_null() {
        drop(Box::from_raw(data));
    }
}

/// Fits a tree with a greedy builder, re-estimating parameters between
/// `iterations` builds (1 means a single build at the starting parameters).
///
/// # Safety
/// `data` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn coal_fit_greedy(
    data: *const CoalData,
    model: CoalModel,
    variant: CoalGreedy,
    iterations: usize,
    out: *mut *mut CoalTree,
) -> CoalStatus {
    guard(|| {
        let d = &in_ref(data, "data")?.0;
        let out = out_ptr(out, "out")?;
        let variant = match variant {
            CoalGreedy::MaxProb => GreedyVariant::MaxProb,
            CoalGreedy::MinDuration => GreedyVariant::MinDuration,
            CoalGreedy::Rate1 => GreedyVariant::Rate1,
        };
        let params0 = KernelParams::initial_for(d, resolve_model(d, model)?)?;
        let cfg = FitConfig {
            iterations,
            inference: Inference::Greedy(variant),
            ..FitConfig::default()
        };
        let fit = learning::fit(d, &params0, &cfg)?;
        let log_marginal = kernels::log_marginal(&fit.genealogy, d, &fit.params)?;
        *out = boxed(CoalTree {
            genealogy: fit.genealogy,
            params: fit.params,
            log_marginal,
        });
        Ok(())
    })
}

/// Runs SMC at the starting parameters and keeps the highest-weight tree.
/// The tree's log marginal is the SMC estimate of the data evidence.
///
/// # Safety
/// `data` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn coal_fit_smc(
    data: *const CoalData,
    model: CoalModel,
    proposal: CoalProposal,
    particles: usize,
    seed: u64,
    out: *mut *mut CoalTree,
) -> CoalStatus {
    guard(|| {
        let d = &in_ref(data, "data")?.0;
        let out = out_ptr(out, "out")?;
        let proposal = match proposal {
            CoalProposal::PriorPrior => Proposal::PriorPrior,
            CoalProposal::PriorPost => Proposal::PriorPost,
            CoalProposal::PostPost => Proposal::PostPost,
        };
        let params = KernelParams::initial_for(d, resolve_model(d, model)?)?;
        let cfg = SmcConfig {
            particles,
            proposal,
            seed,
            ..SmcConfig::default()
        };
        let ens = smc::run_smc(d, &params, &cfg)?;
        *out = boxed(CoalTree {
            genealogy: ens.best().genealogy()?,
            params,
            log_marginal: ens.log_marginal_estimate(),
        });
        Ok(())
    })
}

/// Number of leaves, or 0 for NULL.
///
/// # Safety
/// `tree` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn coal_tree_leaves(tree: *const CoalTree) -> usize {
    tree.as_ref().map_or(0, |t| t.genealogy.n_leaves())
}

/// Log prior of the tree's merge times, NaN for NULL.
///
/// # Safety
/// `tree` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn coal_tree_log_prior(tree: *const CoalTree) -> f64 {
    tree.as_ref().map_or(f64::NAN, |t| t.genealogy.log_prior())
}

/// Log marginal likelihood recorded at fit time, NaN for NULL.
///
/// # Safety
/// `tree` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn coal_tree_log_marginal(tree: *const CoalTree) -> f64 {
    tree.as_ref().map_or(f64::NAN, |t| t.log_marginal)
}

/// Joint log probability of the tree and `data` under the fitted parameters.
///
/// # Safety
/// Handles must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn coal_tree_joint_log_prob(
    tree: *const CoalTree,
    data: *const CoalData,
    out: *mut f64,
) -> CoalStatus {
    guard(|| {
        let t = in_ref(tree, "tree")?;
        let d = &in_ref(data, "data")?.0;
        let out = out_ptr(out, "out")?;
        *out = kernels::joint_log_prob(&t.genealogy, d, &t.params)?;
        Ok(())
    })
}

/// Newick text of the tree with leaves named from `data`'s row labels.
/// Release the string with [`coal_string_free`].
///
/// # Safety
/// Handles must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn coal_tree_newick(
    tree: *const CoalTree,
    data: *const CoalData,
    out: *mut *mut c_char,
) -> CoalStatus {
    guard(|| {
        let t = in_ref(tree, "tree")?;
        let d = &in_ref(data, "data")?.0;
        let out = out_ptr(out, "out")?;
        let text = t.genealogy.to_newick(&d.leaf_labels())?;
        *out = CString::new(text)
            .map_err(|_| Fail(CoalStatus::Data, "label contains NUL".into()))?
            .into_raw();
        Ok(())
    })
}

/// Fills the missing cells of `data` with their posterior point estimates
/// under the tree, producing a new data handle.
///
/// # Safety
/// Handles must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn coal_tree_restore(
    tree: *const CoalTree,
    data: *const CoalData,
    out: *mut *mut CoalData,
) -> CoalStatus {
    guard(|| {
        let t = in_ref(tree, "tree")?;
        let d = &in_ref(data, "data")?.0;
        let out = out_ptr(out, "out")?;
        let r = learning::restore_missing(&t.genealogy, d, &t.params)?;
        *out = boxed(CoalData(r.filled));
        Ok(())
    })
}

/// # Safety
/// `tree` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn coal_tree_free(tree: *mut CoalTree) {
    if !tree.is_null() {
        drop(Box::from_raw(tree));
    }
}

/// # Safety
/// `s` must be NULL or a string returned by this library and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn coal_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
