//! C ABI over the `fedatt` simulator.
//!
//! Parameter sets cross the boundary as opaque `FedattParams` handles that
//! the caller releases with [`fedatt_params_free`]. Every fallible call
//! returns a [`FedattStatus`]; on failure the message is available through
//! [`fedatt_last_error`] on the same thread. Strings returned by the library
//! are released with [`fedatt_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use fedatt::aggregation::{aggregate, attention_weights, AggregationConfig, FedAvgCoefficients};
use fedatt::config::ScenarioConfig;
use fedatt::federation::{run_scenario, RunOptions};
use fedatt::gradcheck::{run_all, GRADCHECK_SEED};
use fedatt::params::ParameterSet;
use fedatt::Error;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FedattStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    SchemaMismatch = 3,
    InvalidConfig = 4,
    RuntimeAbort = 5,
    Io = 6,
    VerificationFailed = 7,
    Panic = 8,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FedattStrategy {
    Fedavg = 0,
    Fedatt = 1,
}

/// Opaque parameter set.
pub struct FedattParams {
    inner: ParameterSet,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(message: impl Into<String>) {
    let text = message.into().replace('\0', " ");
    let c = CString::new(text).expect("interior nul bytes removed");
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

fn clear_last_error() {
    LAST_ERROR.with(|slot| *slot.borrow_mut() = None);
}

fn status_of(e: &Error) -> FedattStatus {
    match e {
        Error::SchemaMismatch(_) => FedattStatus::SchemaMismatch,
        Error::InvalidConfig { .. } | Error::Json(_) | Error::InvalidSpec(_) => {
            FedattStatus::InvalidConfig
        }
        Error::Io { .. } | Error::Csv(_) => FedattStatus::Io,
        e if e.is_runtime_abort() => FedattStatus::RuntimeAbort,
        _ => FedattStatus::InvalidArgument,
    }
}

struct Failure(FedattStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(FedattStatus::NullPointer, format!("{what} is null"))
}

/// Runs `body`, records any failure, and converts panics into a status.
fn guard(body: impl FnOnce() -> Result<(), Failure>) -> FedattStatus {
    clear_last_error();
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => FedattStatus::Ok,
        Ok(Err(Failure(status, message))) => {
            set_last_error(message);
            status
        }
        Err(payload) => {
            let message = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".to_owned());
            set_last_error(format!("internal panic: {message}"));
            FedattStatus::Panic
        }
    }
}

unsafe fn read_str<'a>(ptr: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if ptr.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(ptr).to_str().map_err(|_| {
        Failure(
            FedattStatus::InvalidArgument,
            format!("{what} is not UTF-8"),
        )
    })
}

unsafe fn params_ref<'a>(
    ptr: *const FedattParams,
    what: &str,
) -> Result<&'a ParameterSet, Failure> {
    ptr.as_ref().map(|p| &p.inner).ok_or_else(|| null(what))
}

unsafe fn client_sets(
    clients: *const *const FedattParams,
    num_clients: usize,
) -> Result<Vec<ParameterSet>, Failure> {
    if num_clients == 0 {
        return Err(Failure(FedattStatus::InvalidArgument, "no clients".into()));
    }
    if clients.is_null() {
        return Err(null("clients"));
    }
    std::slice::from_raw_parts(clients, num_clients)
        .iter()
        .enumerate()
        .map(|(i, &p)| params_ref(p, &format!("clients[{i}]")).cloned())
        .collect()
}

/// Copies the calling thread's last error message into `buf` (always
/// nul-terminated when `len > 0`) and returns the full message length in
/// bytes, excluding the terminator. Returns 0 when there is no error.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn fedatt_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|slot| {
        let slot = slot.borrow();
        let Some(message) = slot.as_ref() else {
            if !buf.is_null() && len > 0 {
                *buf = 0;
            }
            return 0;
        };
        let bytes = message.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            ptr::copy_nonoverlapping(bytes.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

/// Library version as a static nul-terminated string.
#[no_mangle]
pub extern "C" fn fedatt_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn fedatt_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Parses a parameter set from its JSON form.
///
/// # Safety
/// `json` must be a nul-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fedatt_params_from_json(
    json: *const c_char,
    out: *mut *mut FedattParams,
) -> FedattStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let text = read_str(json, "json")?;
        let inner = ParameterSet::from_json(text)?;
        *out = Box::into_raw(Box::new(FedattParams { inner }));
        Ok(())
    })
}

/// Serializes a parameter set to JSON. Free the result with
/// [`fedatt_string_free`].
///
/// # Safety
/// `params` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fedatt_params_to_json(
    params: *const FedattParams,
    out: *mut *mut c_char,
) -> FedattStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let text = params_ref(params, "params")?.to_json()?;
        *out = CString::new(text)
            .map_err(|e| Failure(FedattStatus::InvalidArgument, e.to_string()))?
            .into_raw();
        Ok(())
    })
}

/// Number of layers in a parameter set; 0 for a null handle.
///
/// # Safety
/// `params` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fedatt_params_num_layers(params: *const FedattParams) -> usize {
    params.as_ref().map_or(0, |p| p.inner.num_layers())
}

/// Total number of scalar parameters; 0 for a null handle.
///
/// # Safety
/// `params` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fedatt_params_num_values(params: *const FedattParams) -> usize {
    params.as_ref().map_or(0, |p| p.inner.num_values())
}

/// Releases a parameter set. Null is ignored.
///
/// # Safety
/// `params` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn fedatt_params_free(params: *mut FedattParams) {
    if !params.is_null() {
        drop(Box::from_raw(params));
    }
}

/// One server aggregation step. `sample_counts` may be null; it is only
/// read for FedAvg with `data_proportional` set. `epsilon` is ignored by
/// FedAvg. `loss_out` may be null.
///
/// # Safety
/// `clients` must point to `num_clients` live handles and `sample_counts`
/// (when non-null) to `num_clients` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fedatt_aggregate(
    global: *const FedattParams,
    clients: *const *const FedattParams,
    num_clients: usize,
    sample_counts: *const usize,
    strategy: FedattStrategy,
    epsilon: f64,
    data_proportional: bool,
    out: *mut *mut FedattParams,
    loss_out: *mut f64,
) -> FedattStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let global = params_ref(global, "global")?;
        let clients = client_sets(clients, num_clients)?;
        let counts = if sample_counts.is_null() {
            vec![1; num_clients]
        } else {
            std::slice::from_raw_parts(sample_counts, num_clients).to_vec()
        };
        let mut config = match strategy {
            FedattStrategy::Fedavg => AggregationConfig::fedavg(),
            FedattStrategy::Fedatt => AggregationConfig::fedatt(epsilon),
        };
        if strategy == FedattStrategy::Fedavg && data_proportional {
            config.fedavg_coefficients = FedAvgCoefficients::DataProportional;
        }
        let step = aggregate(global, &clients, &counts, &config)?;
        if !loss_out.is_null() {
            *loss_out = step.loss;
        }
        *out = Box::into_raw(Box::new(FedattParams { inner: step.params }));
        Ok(())
    })
}

/// Writes FedAtt attention weights row-major as `[layer][client]` into
/// `weights` (`num_layers × num_clients` values).
///
/// # Safety
/// `clients` must point to `num_clients` live handles; `weights` must point
/// to `weights_len` writable values.
#[no_mangle]
pub unsafe extern "C" fn fedatt_attention_weights(
    global: *const FedattParams,
    clients: *const *const FedattParams,
    num_clients: usize,
    weights: *mut f64,
    weights_len: usize,
) -> FedattStatus {
    guard(|| {
        let global = params_ref(global, "global")?;
        let clients = client_sets(clients, num_clients)?;
        let attention = attention_weights(global, &clients)?;
        let needed = attention.layers().len() * num_clients;
        if weights.is_null() {
            return Err(null("weights"));
        }
        if weights_len < needed {
            return Err(Failure(
                FedattStatus::InvalidArgument,
                format!("weights buffer holds {weights_len} values, {needed} needed"),
            ));
        }
        let dst = std::slice::from_raw_parts_mut(weights, needed);
        for (row, (_, alphas)) in dst.chunks_mut(num_clients).zip(attention.layers()) {
            row.copy_from_slice(alphas);
        }
        Ok(())
    })
}

/// Runs a scenario described by `config_json`, writing CSV outputs into
/// `out_dir` (null to skip writing). `threads == 0` uses every core.
///
/// # Safety
/// String arguments must be null or nul-terminated.
#[no_mangle]
pub unsafe extern "C" fn fedatt_run_scenario(
    config_json: *const c_char,
    out_dir: *const c_char,
    threads: usize,
    checkpoint: bool,
) -> FedattStatus {
    guard(|| {
        let text = read_str(config_json, "config_json")?;
        let out_dir = if out_dir.is_null() {
            None
        } else {
            Some(PathBuf::from(read_str(out_dir, "out_dir")?))
        };
        let config = ScenarioConfig::from_json_str(text, &[])?;
        let options = RunOptions {
            threads,
            out_dir,
            checkpoint,
        };
        run_scenario(&config, &options, &mut |_, _| {})?;
        Ok(())
    })
}

/// Gradient checks for the three learner kinds. Writes each kind's maximum
/// relative error into `max_errors` (linear, MLP, LSTM order) when non-null
/// and returns `VerificationFailed` if any exceeds the tolerance.
///
/// # Safety
/// `max_errors` must be null or point to 3 writable values.
#[no_mangle]
pub unsafe extern "C" fn fedatt_gradcheck(max_errors: *mut f64) -> FedattStatus {
    guard(|| {
        let results = run_all(GRADCHECK_SEED, 0.0)?;
        if !max_errors.is_null() {
            for (i, r) in results.iter().enumerate().take(3) {
                *max_errors.add(i) = r.max_relative_error;
            }
        }
        match results.iter().find(|r| !r.passed()) {
            None => Ok(()),
            Some(r) => Err(Failure(
                FedattStatus::VerificationFailed,
                format!(
                    "{} gradient error {:e}",
                    r.kind.name(),
                    r.max_relative_error
                ),
            )),
        }
    })
}
