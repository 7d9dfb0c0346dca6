//! C ABI over `realtrees`.
//!
//! Every fallible function returns an [`RtStatus`]. On failure the message
//! is available from [`rt_last_error`] on the same thread until the next
//! failing call. Objects are opaque handles released with their `_free`
//! function; strings returned to the caller are released with
//! [`rt_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use realtrees::committee::{compute_weights, effective_committee_size, vote_entropy, VoteDistribution, Weighting};
use realtrees::data::{binarize, gen_parity, gen_xor_mixture, load_csv, Dataset, SyntheticConfig};
use realtrees::experiment::{run_experiment, write_outputs, ExperimentConfig};
use realtrees::rashomon::{enumerate_rashomon, RashomonSet, SearchConfig};
use realtrees::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RtStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    Config = 5,
    Data = 6,
    SetOverflow = 7,
    EpsilonExhausted = 8,
    RunFailed = 9,
    Panic = 10,
}

/// Binary feature matrix with class labels.
pub struct RtDataset(Dataset);

/// Enumerated Rashomon set.
pub struct RtRashomonSet(RashomonSet);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let msg = CString::new(msg.replace('\0', " ")).unwrap();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

fn status_of(e: &Error) -> RtStatus {
    match e {
        Error::InvalidArgument(_) | Error::FeatureIndexOutOfRange { .. } => RtStatus::InvalidArgument,
        Error::Io(_) => RtStatus::Io,
        Error::Csv(_) | Error::Json(_) | Error::Format { .. } | Error::RaggedRow(_) => RtStatus::Parse,
        Error::Config(_) => RtStatus::Config,
        Error::RashomonSetOverflow { .. } => RtStatus::SetOverflow,
        Error::EpsilonExhausted { .. } => RtStatus::EpsilonExhausted,
        Error::Run { source, .. } => status_of(source),
        _ => RtStatus::Data,
    }
}

struct Fail(RtStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(RtStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> Fail {
    Fail(RtStatus::InvalidArgument, msg.into())
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> RtStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => RtStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            RtStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| invalid(format!("{what} is not UTF-8")))
}

unsafe fn ref_arg<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn write_out<T>(out: *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    out.write(value);
    Ok(())
}

unsafe fn put_dataset(out: *mut *mut RtDataset, ds: Dataset) -> Result<(), Fail> {
    write_out(out, Box::into_raw(Box::new(RtDataset(ds))))
}

/// Message of the last failure on this thread, or null. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn rt_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn rt_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// # Safety
/// `s` must be null or a string returned by this library.
#[no_mangle]
pub unsafe extern "C" fn rt_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Loads a CSV file and binarizes its columns.
///
/// # Safety
/// `path` and `label` must be NUL-terminated strings; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rt_dataset_from_csv(
    path: *const c_char,
    label: *const c_char,
    max_thresholds: usize,
    out: *mut *mut RtDataset,
) -> RtStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        let label = str_arg(label, "label")?;
        let raw = load_csv(Path::new(path), label)?;
        let (ds, _) = binarize(&raw, max_thresholds)?;
        put_dataset(out, ds)
    })
}

/// XOR / linear-threshold mixture with label noise `phi`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rt_dataset_xor(
    n: usize,
    p: usize,
    alpha: f64,
    phi: f64,
    seed: u64,
    out: *mut *mut RtDataset,
) -> RtStatus {
    guard(|| {
        let cfg = SyntheticConfig { p, alpha, phi, ..SyntheticConfig::new(n, seed) };
        put_dataset(out, gen_xor_mixture(&cfg)?)
    })
}

/// Three-bit parity padded with `noise_dims` irrelevant features.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rt_dataset_parity(
    n: usize,
    noise_dims: usize,
    seed: u64,
    out: *mut *mut RtDataset,
) -> RtStatus {
    guard(|| put_dataset(out, gen_parity(n, noise_dims, seed)?))
}

/// Builds a dataset from a row-major 0/1 matrix and labels in `0..n_classes`.
///
/// # Safety
/// `x` must hold `n * p` bytes and `y` `n` labels; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rt_dataset_from_matrix(
    x: *const u8,
    y: *const u32,
    n: usize,
    p: usize,
    n_classes: usize,
    out: *mut *mut RtDataset,
) -> RtStatus {
    guard(|| {
        let cells = n.checked_mul(p).ok_or_else(|| invalid("n * p overflows"))?;
        let x = slice_arg(x, cells, "x")?;
        let y = slice_arg(y, n, "y")?;
        let rows: Vec<Vec<u8>> = if p == 0 { vec![Vec::new(); n] } else { x.chunks(p).map(<[u8]>::to_vec).collect() };
        let labels = y.to_vec();
        let features = (0..p).map(|j| format!("x{j}")).collect();
        let classes = (0..n_classes).map(|c| c.to_string()).collect();
        put_dataset(out, Dataset::from_rows(&rows, labels, features, classes)?)
    })
}

/// # Safety
/// `ds` must be null or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn rt_dataset_free(ds: *mut RtDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// # Safety
/// `ds` must be a live handle and the output pointers writable.
#[no_mangle]
pub unsafe extern "C" fn rt_dataset_shape(
    ds: *const RtDataset,
    n: *mut usize,
    p: *mut usize,
    n_classes: *mut usize,
) -> RtStatus {
    guard(|| {
        let ds = &ref_arg(ds, "dataset")?.0;
        write_out(n, ds.n())?;
        write_out(p, ds.p())?;
        write_out(n_classes, ds.n_classes())
    })
}

/// Enumerates every legal tree within `(1 + epsilon)` of the optimal
/// objective. A `cap` of zero means the library default.
///
/// # Safety
/// `ds` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn rt_rashomon_enumerate(
    ds: *const RtDataset,
    max_depth: usize,
    lambda: f64,
    epsilon: f64,
    cap: usize,
    out: *mut *mut RtRashomonSet,
) -> RtStatus {
    guard(|| {
        let ds = &ref_arg(ds, "dataset")?.0;
        let mut cfg = SearchConfig::new(max_depth, lambda, epsilon);
        if cap > 0 {
            cfg.set_size_cap = cap;
        }
        let set = enumerate_rashomon(ds, &cfg)?;
        write_out(out, Box::into_raw(Box::new(RtRashomonSet(set))))
    })
}

/// # Safety
/// `set` must be null or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn rt_rashomon_free(set: *mut RtRashomonSet) {
    if !set.is_null() {
        drop(Box::from_raw(set));
    }
}

/// Member count, optimal objective and inclusion threshold.
///
/// # Safety
/// `set` must be a live handle and the output pointers writable.
#[no_mangle]
pub unsafe extern "C" fn rt_rashomon_summary(
    set: *const RtRashomonSet,
    len: *mut usize,
    optimum: *mut f64,
    threshold: *mut f64,
) -> RtStatus {
    guard(|| {
        let set = &ref_arg(set, "set")?.0;
        write_out(len, set.len())?;
        write_out(optimum, set.optimum)?;
        write_out(threshold, set.threshold)
    })
}

unsafe fn member<'a>(set: *const RtRashomonSet, index: usize) -> Result<&'a realtrees::rashomon::Member, Fail> {
    let set = &ref_arg(set, "set")?.0;
    set.members.get(index).ok_or_else(|| invalid(format!("member {index} out of range for {} trees", set.len())))
}

/// Objective, misclassification count and leaf count of one member.
///
/// # Safety
/// `set` must be a live handle and the output pointers writable.
#[no_mangle]
pub unsafe extern "C" fn rt_rashomon_member(
    set: *const RtRashomonSet,
    index: usize,
    objective: *mut f64,
    misclassified: *mut usize,
    leaves: *mut usize,
) -> RtStatus {
    guard(|| {
        let m = member(set, index)?;
        write_out(objective, m.objective.value)?;
        write_out(misclassified, m.objective.misclassified)?;
        write_out(leaves, m.objective.leaves)
    })
}

/// Text form of one member, e.g. `(f0 l0 l1)`. Free with [`rt_string_free`].
///
/// # Safety
/// `set` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn rt_rashomon_member_text(
    set: *const RtRashomonSet,
    index: usize,
    out: *mut *mut c_char,
) -> RtStatus {
    guard(|| {
        let text = CString::new(member(set, index)?.tree.to_string()).map_err(|_| invalid("tree text has NUL"))?;
        write_out(out, text.into_raw())
    })
}

/// Predicted label of one member for a row of `p` 0/1 values.
///
/// # Safety
/// `set` must be a live handle, `row` must hold `p` bytes and `label` be writable.
#[no_mangle]
pub unsafe extern "C" fn rt_rashomon_member_predict(
    set: *const RtRashomonSet,
    index: usize,
    row: *const u8,
    p: usize,
    label: *mut u32,
) -> RtStatus {
    guard(|| {
        let row = slice_arg(row, p, "row")?;
        let l = member(set, index)?.tree.predict(row)?;
        write_out(label, l)
    })
}

/// Copies the member objectives into `out`, which must hold `len` values
/// where `len` is the set size.
///
/// # Safety
/// `set` must be a live handle and `out` writable for `len` values.
#[no_mangle]
pub unsafe extern "C" fn rt_rashomon_losses(set: *const RtRashomonSet, out: *mut f64, len: usize) -> RtStatus {
    guard(|| {
        let losses = ref_arg(set, "set")?.0.losses();
        if len != losses.len() {
            return Err(invalid(format!("buffer holds {len} values, set has {}", losses.len())));
        }
        if len > 0 && out.is_null() {
            return Err(null("output buffer"));
        }
        ptr::copy_nonoverlapping(losses.as_ptr(), out, len);
        Ok(())
    })
}

/// Committee weights for `len` losses. `gibbs` selects `exp(-beta * loss)`
/// weighting, otherwise weights are uniform.
///
/// # Safety
/// `losses` must hold `len` values and `out` be writable for `len` values.
#[no_mangle]
pub unsafe extern "C" fn rt_committee_weights(
    losses: *const f64,
    len: usize,
    gibbs: bool,
    beta: f64,
    out: *mut f64,
) -> RtStatus {
    guard(|| {
        let losses = slice_arg(losses, len, "losses")?;
        let mode = if gibbs { Weighting::Gibbs } else { Weighting::Uniform };
        let w = compute_weights(losses, mode, beta)?;
        if out.is_null() {
            return Err(null("output buffer"));
        }
        ptr::copy_nonoverlapping(w.as_ptr(), out, len);
        Ok(())
    })
}

/// `exp` of the Shannon entropy of `len` weights.
///
/// # Safety
/// `weights` must hold `len` values and `out` be writable.
#[no_mangle]
pub unsafe extern "C" fn rt_effective_committee_size(weights: *const f64, len: usize, out: *mut f64) -> RtStatus {
    guard(|| {
        let w = slice_arg(weights, len, "weights")?;
        write_out(out, effective_committee_size(w))
    })
}

/// Shannon entropy in nats of a class distribution.
///
/// # Safety
/// `probs` must hold `len` values and `out` be writable.
#[no_mangle]
pub unsafe extern "C" fn rt_vote_entropy(probs: *const f64, len: usize, out: *mut f64) -> RtStatus {
    guard(|| {
        let p = slice_arg(probs, len, "probs")?;
        write_out(out, vote_entropy(&VoteDistribution(p.to_vec())))
    })
}

/// Runs a JSON experiment config and writes its result files. `output`
/// overrides the config's output directory when non-null. Returns
/// `RunFailed` when the files were written but some runs failed.
///
/// # Safety
/// `config_path` must be a NUL-terminated string, `output` null or one.
#[no_mangle]
pub unsafe extern "C" fn rt_run_experiment(config_path: *const c_char, output: *const c_char, jobs: usize) -> RtStatus {
    guard(|| {
        let mut cfg = ExperimentConfig::load(str_arg(config_path, "config path")?)?;
        if !output.is_null() {
            cfg.output = str_arg(output, "output")?.into();
        }
        let bundle = run_experiment(&cfg, jobs.max(1))?;
        write_outputs(&bundle, &cfg.output)?;
        match bundle.failures().count() {
            0 => Ok(()),
            k => Err(Fail(RtStatus::RunFailed, format!("{k} of {} runs failed", bundle.outcomes.len()))),
        }
    })
}
