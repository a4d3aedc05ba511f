//! C ABI over `latent_shrink`.
//!
//! Models and controllers are opaque heap handles created by `*_new` /
//! `*_load` and released with the matching `*_free`. Every fallible function
//! returns an [`LsStatus`]; on failure a message is available from
//! [`ls_last_error_message`] on the same thread. Matrices are row-major
//! `double` buffers owned by the caller.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;
use std::slice;

use latent_shrink::controller::{Action, ControllerConfig, ScheduleState};
use latent_shrink::harness::{run, RunConfig};
use latent_shrink::metrics::{frechet_distance, silhouette_score, MetricRecord};
use latent_shrink::model::{init_model, load_checkpoint, save_checkpoint, CheckpointHeader, VaeParams};
use latent_shrink::numerics::{Matrix, RngState};
use latent_shrink::pruning::{prune_latent, PruneEvent, PruneStrategy};
use latent_shrink::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Shape = 3,
    LatentFloor = 4,
    Numeric = 5,
    Io = 6,
    Format = 7,
    Config = 8,
    Panic = 9,
}

impl From<&Error> for LsStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Shape(_) => LsStatus::Shape,
            Error::LatentFloor { .. } | Error::WouldViolateFloor { .. } => LsStatus::LatentFloor,
            Error::NotSymmetric(_) | Error::NonFinite(_) => LsStatus::Numeric,
            Error::Io { .. } => LsStatus::Io,
            Error::NotIdx(_) | Error::Format(_) => LsStatus::Format,
            Error::Config(_) => LsStatus::Config,
            _ => LsStatus::InvalidArgument,
        }
    }
}

/// Opaque VAE parameter set.
pub struct LsModel {
    params: VaeParams,
}

/// Opaque compression controller.
pub struct LsController {
    state: ScheduleState,
}

/// One epoch of validation metrics.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LsMetrics {
    pub epoch: usize,
    pub latent_dim: usize,
    pub silhouette: f64,
    pub fid_recon: f64,
    pub fid_gen: f64,
    pub recon_loss: f64,
    pub kl: f64,
    pub elbo: f64,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LsActionKind {
    Continue = 0,
    Prune = 1,
    Freeze = 2,
}

/// A controller decision; `count` is the number of latent neurons to remove
/// when `kind` is prune, 0 otherwise.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LsAction {
    pub kind: LsActionKind,
    pub count: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn describe(e: &Error) -> String {
    let mut msg = e.to_string();
    let mut source = std::error::Error::source(e);
    while let Some(s) = source {
        msg.push_str(": ");
        msg.push_str(&s.to_string());
        source = s.source();
    }
    msg
}

struct Failure(LsStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(LsStatus::from(&e), describe(&e))
    }
}

fn null(what: &str) -> Failure {
    Failure(LsStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> LsStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => LsStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal panic: {msg}"));
            LsStatus::Panic
        }
    }
}

unsafe fn input<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn output<'a, T>(p: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts_mut(p, len))
}

unsafe fn matrix(p: *const f64, rows: usize, cols: usize, what: &str) -> Result<Matrix, Failure> {
    let len = rows
        .checked_mul(cols)
        .ok_or_else(|| Failure(LsStatus::InvalidArgument, format!("{what}: size overflows")))?;
    Ok(Matrix::new(rows, cols, input(p, len, what)?.to_vec())?)
}

unsafe fn path(p: *const c_char, what: &str) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(LsStatus::InvalidArgument, format!("{what} is not UTF-8")))?;
    Ok(PathBuf::from(s))
}

unsafe fn model_ref<'a>(m: *const LsModel) -> Result<&'a LsModel, Failure> {
    m.as_ref().ok_or_else(|| null("model"))
}

/// Message for the last failed call on this thread, or NULL. The pointer is
/// valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn ls_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Creates a freshly initialized model.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn ls_model_new(d: usize, hidden: usize, latent_dim: usize, seed: u64, out: *mut *mut LsModel) -> LsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let params = init_model(d, hidden, latent_dim, &mut RngState::new(seed))?;
        *out = Box::into_raw(Box::new(LsModel { params }));
        Ok(())
    })
}

/// # Safety
/// `model` must be NULL or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ls_model_free(model: *mut LsModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Latent size of `model`, or 0 for NULL.
///
/// # Safety
/// `model` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ls_model_latent_dim(model: *const LsModel) -> usize {
    model.as_ref().map_or(0, |m| m.params.latent_dim())
}

/// Input width of `model`, or 0 for NULL.
///
/// # Safety
/// `model` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ls_model_data_dim(model: *const LsModel) -> usize {
    model.as_ref().map_or(0, |m| m.params.data_dim())
}

/// Posterior means and log-variances of `rows` inputs of width
/// `ls_model_data_dim`. Each output holds `rows × ls_model_latent_dim`
/// values.
///
/// # Safety
/// Buffers must hold the stated number of doubles.
#[no_mangle]
pub unsafe extern "C" fn ls_model_encode(
    model: *const LsModel,
    x: *const f64,
    rows: usize,
    mu_out: *mut f64,
    logvar_out: *mut f64,
) -> LsStatus {
    guard(|| {
        let m = model_ref(model)?;
        let x = matrix(x, rows, m.params.data_dim(), "x")?;
        let (mu, logvar) = m.params.encode(&x)?;
        output(mu_out, mu.data().len(), "mu_out")?.copy_from_slice(mu.data());
        output(logvar_out, logvar.data().len(), "logvar_out")?.copy_from_slice(logvar.data());
        Ok(())
    })
}

/// Pixel probabilities for `rows` latent vectors; `out` holds
/// `rows × ls_model_data_dim` values.
///
/// # Safety
/// Buffers must hold the stated number of doubles.
#[no_mangle]
pub unsafe extern "C" fn ls_model_decode(model: *const LsModel, z: *const f64, rows: usize, out: *mut f64) -> LsStatus {
    guard(|| {
        let m = model_ref(model)?;
        let z = matrix(z, rows, m.params.latent_dim(), "z")?;
        let probs = m.params.decode(&z)?;
        output(out, probs.data().len(), "out")?.copy_from_slice(probs.data());
        Ok(())
    })
}

/// Removes the latent coordinates listed in `indices` in place.
///
/// # Safety
/// `indices` must hold `count` values.
#[no_mangle]
pub unsafe extern "C" fn ls_model_prune(model: *mut LsModel, indices: *const usize, count: usize) -> LsStatus {
    guard(|| {
        let m = model.as_mut().ok_or_else(|| null("model"))?;
        let idx = input(indices, count, "indices")?;
        let (pruned, _) = prune_latent(m.params.clone(), idx)?;
        m.params = pruned;
        Ok(())
    })
}

/// # Safety
/// `file` must be a NUL-terminated UTF-8 path.
#[no_mangle]
pub unsafe extern "C" fn ls_model_save(model: *const LsModel, file: *const c_char) -> LsStatus {
    guard(|| {
        let m = model_ref(model)?;
        let header = CheckpointHeader::for_model(&m.params, 0, 0);
        Ok(save_checkpoint(path(file, "path")?, &header, &m.params)?)
    })
}

/// # Safety
/// `file` must be a NUL-terminated UTF-8 path and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ls_model_load(file: *const c_char, out: *mut *mut LsModel) -> LsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let (_, params) = load_checkpoint(path(file, "path")?)?;
        *out = Box::into_raw(Box::new(LsModel { params }));
        Ok(())
    })
}

/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ls_controller_new(
    patience: usize,
    decrease: usize,
    window: usize,
    slowdown_window: usize,
    init_latent_dim: usize,
    out: *mut *mut LsController,
) -> LsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let config = ControllerConfig {
            patience,
            decrease,
            window,
            slowdown_window,
        };
        let state = ScheduleState::new(config, init_latent_dim)?;
        *out = Box::into_raw(Box::new(LsController { state }));
        Ok(())
    })
}

/// # Safety
/// `controller` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ls_controller_free(controller: *mut LsController) {
    if !controller.is_null() {
        drop(Box::from_raw(controller));
    }
}

/// Current latent size tracked by the controller, or 0 for NULL.
///
/// # Safety
/// `controller` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ls_controller_latent_dim(controller: *const LsController) -> usize {
    controller.as_ref().map_or(0, |c| c.state.latent_dim())
}

/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn ls_controller_record(controller: *mut LsController, metrics: *const LsMetrics) -> LsStatus {
    guard(|| {
        let c = controller.as_mut().ok_or_else(|| null("controller"))?;
        let m = metrics.as_ref().ok_or_else(|| null("metrics"))?;
        let record = MetricRecord {
            epoch: m.epoch,
            latent_dim: m.latent_dim,
            silhouette: m.silhouette,
            fid_recon: m.fid_recon,
            fid_gen: m.fid_gen,
            recon_loss: m.recon_loss,
            kl: m.kl,
            elbo: m.elbo,
        };
        Ok(c.state.record_epoch(&record)?)
    })
}

/// Decision for the most recently recorded epoch. After a prune decision
/// the caller removes `count` coordinates from its model and reports them
/// with [`ls_controller_record_prune`].
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn ls_controller_decide(controller: *mut LsController, epoch: usize, out: *mut LsAction) -> LsStatus {
    guard(|| {
        let c = controller.as_mut().ok_or_else(|| null("controller"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = match c.state.decide(epoch)? {
            Action::Continue => LsAction { kind: LsActionKind::Continue, count: 0 },
            Action::Prune(n) => LsAction { kind: LsActionKind::Prune, count: n },
            Action::Freeze => LsAction { kind: LsActionKind::Freeze, count: 0 },
        };
        Ok(())
    })
}

/// # Safety
/// `indices` must hold `count` values.
#[no_mangle]
pub unsafe extern "C" fn ls_controller_record_prune(
    controller: *mut LsController,
    epoch: usize,
    indices: *const usize,
    count: usize,
) -> LsStatus {
    guard(|| {
        let c = controller.as_mut().ok_or_else(|| null("controller"))?;
        let mut removed = input(indices, count, "indices")?.to_vec();
        removed.sort_unstable();
        let old_nz = c.state.latent_dim();
        let event = PruneEvent {
            epoch,
            removed_indices: removed,
            old_nz,
            new_nz: old_nz.saturating_sub(count),
            strategy: PruneStrategy::Random,
        };
        Ok(c.state.record_prune(event)?)
    })
}

/// Mean silhouette of `rows × cols` points under integer labels.
///
/// # Safety
/// Buffers must hold the stated number of values.
#[no_mangle]
pub unsafe extern "C" fn ls_silhouette_score(
    points: *const f64,
    rows: usize,
    cols: usize,
    labels: *const usize,
    out: *mut f64,
) -> LsStatus {
    guard(|| {
        let pts = matrix(points, rows, cols, "points")?;
        let labels = input(labels, rows, "labels")?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = silhouette_score(&pts, labels)?;
        Ok(())
    })
}

/// Fréchet distance between Gaussians fitted to two feature sets of equal
/// width `cols`.
///
/// # Safety
/// Buffers must hold the stated number of values.
#[no_mangle]
pub unsafe extern "C" fn ls_frechet_distance(
    a: *const f64,
    rows_a: usize,
    b: *const f64,
    rows_b: usize,
    cols: usize,
    out: *mut f64,
) -> LsStatus {
    guard(|| {
        let a = matrix(a, rows_a, cols, "a")?;
        let b = matrix(b, rows_b, cols, "b")?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = frechet_distance(&a, &b)?;
        Ok(())
    })
}

/// Runs the experiment described by a TOML config file, writing its outputs
/// to the configured directory.
///
/// # Safety
/// `config_file` must be a NUL-terminated UTF-8 path.
#[no_mangle]
pub unsafe extern "C" fn ls_run_config_file(config_file: *const c_char) -> LsStatus {
    guard(|| {
        let cfg = RunConfig::from_file(path(config_file, "config path")?)?;
        run(&cfg)?;
        Ok(())
    })
}
