//! C ABI over `gradlab`.
//!
//! Every fallible function returns a [`GlStatus`]; on failure a message is
//! kept per thread and can be read with [`gl_last_error_message`]. Networks
//! and gradient buffers are opaque handles owned by the caller and released
//! with their `_free` function. All arithmetic is in `f64`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use gradlab::coherence::fraction_stats;
use gradlab::dataset::proper_accuracy;
use gradlab::harness::{run_experiment, HarnessError, TrainConfig};
use gradlab::net::{forward, load_checkpoint, per_example_gradients, save_checkpoint, Batch, GradientBuffer, MlpParams, NetError};
use gradlab::optimizer::{sgd_step, winsorize, winsorized_sgd_step, OptimError, WinsorConfig};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GlStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Shape = 3,
    NonFinite = 4,
    Io = 5,
    Format = 6,
    Panic = 7,
}

/// Network parameters.
pub struct GlParams(MlpParams<f64>);

/// Per-example gradients of one minibatch.
pub struct GlGradients(GradientBuffer<f64>);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(GlStatus, String);

impl Failure {
    fn null(what: &str) -> Self {
        Failure(GlStatus::NullPointer, format!("{what} is null"))
    }

    fn invalid(msg: impl Into<String>) -> Self {
        Failure(GlStatus::InvalidArgument, msg.into())
    }
}

impl From<NetError> for Failure {
    fn from(e: NetError) -> Self {
        let status = match e {
            NetError::Architecture(_) | NetError::Label { .. } => GlStatus::InvalidArgument,
            NetError::Shape(_) => GlStatus::Shape,
            NetError::NonFinite(_) => GlStatus::NonFinite,
            NetError::Checkpoint(_) => GlStatus::Format,
        };
        Failure(status, e.to_string())
    }
}

impl From<OptimError> for Failure {
    fn from(e: OptimError) -> Self {
        let status = match e {
            OptimError::Shape => GlStatus::Shape,
            OptimError::NonFinite(_) => GlStatus::NonFinite,
            _ => GlStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        let status = match &e {
            HarnessError::Io { .. } => GlStatus::Io,
            HarnessError::Dataset(gradlab::dataset::DatasetError::Io { .. }) => GlStatus::Io,
            HarnessError::Dataset(_) => GlStatus::Format,
            HarnessError::NonFiniteLoss { .. } | HarnessError::NonFinite { .. } => GlStatus::NonFinite,
            HarnessError::Net(_) | HarnessError::Optim(_) | HarnessError::Coherence(_) => GlStatus::InvalidArgument,
            HarnessError::Config(_) => GlStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> GlStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|slot| *slot.borrow_mut() = None);
            GlStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_last_error(&msg);
            status
        }
        Err(_) => {
            set_last_error("internal panic");
            GlStatus::Panic
        }
    }
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure::null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(Failure::null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| Failure::null(what))
}

unsafe fn handle_mut<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| Failure::null(what))
}

unsafe fn out<T>(p: *mut T, what: &str, value: T) -> Result<(), Failure> {
    if p.is_null() {
        return Err(Failure::null(what));
    }
    p.write(value);
    Ok(())
}

unsafe fn path(p: *const c_char, what: &str) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(Failure::null(what));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::invalid(format!("{what} is not UTF-8")))?;
    Ok(PathBuf::from(s))
}

fn labels_of(labels: &[u32]) -> Vec<usize> {
    labels.iter().map(|&y| y as usize).collect()
}

/// Message of the last failed call on this thread, or null after a
/// successful call. Valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn gl_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Best achievable accuracy on labels where a fraction `noise` was
/// replaced by uniform draws over `num_classes` classes.
///
/// # Safety
/// `out_accuracy` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn gl_proper_accuracy(noise: f64, num_classes: usize, out_accuracy: *mut f64) -> GlStatus {
    guard(|| {
        let a = proper_accuracy(noise, num_classes).map_err(|e| Failure::invalid(e.to_string()))?;
        out(out_accuracy, "out_accuracy", a)
    })
}

/// Sum of `values` after clipping to the c-th and (100-c)-th order
/// statistics.
///
/// # Safety
/// `values` must point to `len` readable doubles; `out_sum` must be valid
/// for writes.
#[no_mangle]
pub unsafe extern "C" fn gl_winsorize(values: *const f64, len: usize, c: f64, out_sum: *mut f64) -> GlStatus {
    guard(|| {
        let v = slice(values, len, "values")?;
        if !(0.0..=50.0).contains(&c) {
            return Err(Failure::invalid(format!("winsorization level {c} outside [0, 50]")));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Failure(GlStatus::NonFinite, "non-finite input value".into()));
        }
        out(out_sum, "out_sum", winsorize(v, c))
    })
}

/// Xavier-initialised network with layer widths `widths[0..num_widths]`,
/// input first.
///
/// # Safety
/// `widths` must point to `num_widths` readable values; `out_params` must be
/// valid for writes.
#[no_mangle]
pub unsafe extern "C" fn gl_params_xavier(widths: *const usize, num_widths: usize, seed: u64, out_params: *mut *mut GlParams) -> GlStatus {
    guard(|| {
        let w = slice(widths, num_widths, "widths")?;
        let p = MlpParams::<f64>::xavier(w, seed)?;
        out(out_params, "out_params", Box::into_raw(Box::new(GlParams(p))))
    })
}

/// # Safety
/// `params` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn gl_params_free(params: *mut GlParams) {
    if !params.is_null() {
        drop(Box::from_raw(params));
    }
}

/// # Safety
/// `params` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn gl_params_num_layers(params: *const GlParams) -> usize {
    params.as_ref().map_or(0, |p| p.0.layers().len())
}

/// # Safety
/// `params` must be a live handle; the out pointers must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn gl_params_layer_shape(params: *const GlParams, layer: usize, out_fan_in: *mut usize, out_fan_out: *mut usize) -> GlStatus {
    guard(|| {
        let p = handle(params, "params")?;
        let l = p.0.layers().get(layer).ok_or_else(|| Failure::invalid(format!("no layer {layer}")))?;
        out(out_fan_in, "out_fan_in", l.fan_in)?;
        out(out_fan_out, "out_fan_out", l.fan_out)
    })
}

/// Copies layer `layer` into caller buffers: `fan_out * fan_in` row-major
/// weights and `fan_out` biases.
///
/// # Safety
/// `params` must be a live handle; `weights` and `bias` must have room for
/// the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn gl_params_copy_layer(
    params: *const GlParams,
    layer: usize,
    weights: *mut f64,
    weights_len: usize,
    bias: *mut f64,
    bias_len: usize,
) -> GlStatus {
    guard(|| {
        let p = handle(params, "params")?;
        let l = p.0.layers().get(layer).ok_or_else(|| Failure::invalid(format!("no layer {layer}")))?;
        if weights_len != l.weights.len() || bias_len != l.bias.len() {
            return Err(Failure(GlStatus::Shape, format!("layer {layer} is {}x{}", l.fan_out, l.fan_in)));
        }
        slice_mut(weights, weights_len, "weights")?.copy_from_slice(&l.weights);
        slice_mut(bias, bias_len, "bias")?.copy_from_slice(&l.bias);
        Ok(())
    })
}

/// # Safety
/// `params` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn gl_checkpoint_save(params: *const GlParams, path_c: *const c_char) -> GlStatus {
    guard(|| {
        let p = handle(params, "params")?;
        let path = path(path_c, "path")?;
        save_checkpoint(&p.0, &path).map_err(|e| Failure(GlStatus::Io, format!("{}: {e}", path.display())))
    })
}

/// # Safety
/// `path` must be a NUL-terminated string; `out_params` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn gl_checkpoint_load(path_c: *const c_char, out_params: *mut *mut GlParams) -> GlStatus {
    guard(|| {
        let path = path(path_c, "path")?;
        if !path.is_file() {
            return Err(Failure(GlStatus::Io, format!("{}: no such file", path.display())));
        }
        let p = load_checkpoint::<f64>(&path)?;
        out(out_params, "out_params", Box::into_raw(Box::new(GlParams(p))))
    })
}

/// Per-example losses of `num_examples` row-major feature vectors.
///
/// # Safety
/// `features` must hold `num_examples * input width` doubles, `labels` and
/// `out_losses` `num_examples` values each.
#[no_mangle]
pub unsafe extern "C" fn gl_forward_losses(
    params: *const GlParams,
    features: *const f64,
    labels: *const u32,
    num_examples: usize,
    out_losses: *mut f64,
) -> GlStatus {
    guard(|| {
        let p = handle(params, "params")?;
        let d = p.0.input_width();
        let x = slice(features, num_examples * d, "features")?;
        let y = labels_of(slice(labels, num_examples, "labels")?);
        let pass = forward(&p.0, &Batch::new(x, d, &y)?)?;
        slice_mut(out_losses, num_examples, "out_losses")?.copy_from_slice(&pass.losses);
        Ok(())
    })
}

/// Per-example gradients of a minibatch.
///
/// # Safety
/// As for [`gl_forward_losses`]; `out_grads` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn gl_gradients_compute(
    params: *const GlParams,
    features: *const f64,
    labels: *const u32,
    num_examples: usize,
    out_grads: *mut *mut GlGradients,
) -> GlStatus {
    guard(|| {
        let p = handle(params, "params")?;
        let d = p.0.input_width();
        let x = slice(features, num_examples * d, "features")?;
        let y = labels_of(slice(labels, num_examples, "labels")?);
        let g = per_example_gradients(&p.0, &Batch::new(x, d, &y)?)?;
        out(out_grads, "out_grads", Box::into_raw(Box::new(GlGradients(g))))
    })
}

/// # Safety
/// `grads` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn gl_gradients_free(grads: *mut GlGradients) {
    if !grads.is_null() {
        drop(Box::from_raw(grads));
    }
}

/// Number of trainable coordinates, which is the length of every flattened
/// gradient (layer by layer, weights then bias).
///
/// # Safety
/// `grads` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn gl_gradients_num_coordinates(grads: *const GlGradients) -> usize {
    grads.as_ref().map_or(0, |g| g.0.batch_sum().num_params())
}

/// Flattened sum of the per-example gradients.
///
/// # Safety
/// `grads` must be a live handle; `out_values` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn gl_gradients_batch_sum(grads: *const GlGradients, out_values: *mut f64, len: usize) -> GlStatus {
    guard(|| {
        let g = handle(grads, "grads")?;
        copy_flat(&g.0.batch_sum().flatten(), out_values, len)
    })
}

/// Flattened gradient of example `example`.
///
/// # Safety
/// `grads` must be a live handle; `out_values` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn gl_gradients_per_example(grads: *const GlGradients, example: usize, out_values: *mut f64, len: usize) -> GlStatus {
    guard(|| {
        let g = handle(grads, "grads")?;
        if example >= g.0.m() {
            return Err(Failure::invalid(format!("example {example} outside batch of {}", g.0.m())));
        }
        copy_flat(&g.0.example_gradient(example).flatten(), out_values, len)
    })
}

unsafe fn copy_flat(values: &[f64], dst: *mut f64, len: usize) -> Result<(), Failure> {
    if len != values.len() {
        return Err(Failure(GlStatus::Shape, format!("expected {} values, buffer holds {len}", values.len())));
    }
    slice_mut(dst, len, "out_values")?.copy_from_slice(values);
    Ok(())
}

/// `w <- w - (learning_rate / m) * sum of gradients`.
///
/// # Safety
/// `params` and `grads` must be live handles.
#[no_mangle]
pub unsafe extern "C" fn gl_sgd_step(params: *mut GlParams, grads: *const GlGradients, learning_rate: f64) -> GlStatus {
    guard(|| {
        let p = handle_mut(params, "params")?;
        let g = handle(grads, "grads")?;
        sgd_step(&mut p.0, &g.0, learning_rate)?;
        Ok(())
    })
}

/// Update with each coordinate's minibatch sum replaced by its winsorized
/// sum at level `c`.
///
/// # Safety
/// `params` and `grads` must be live handles.
#[no_mangle]
pub unsafe extern "C" fn gl_winsorized_sgd_step(params: *mut GlParams, grads: *const GlGradients, c: f64, learning_rate: f64) -> GlStatus {
    guard(|| {
        let p = handle_mut(params, "params")?;
        let g = handle(grads, "grads")?;
        let cfg = WinsorConfig::new(c, learning_rate, g.0.m())?;
        winsorized_sgd_step(&mut p.0, &g.0, &cfg)?;
        Ok(())
    })
}

/// Shares `<g,g_p>/<g,g>` and `<g,g_c>/<g,g>` of a gradient split into two
/// parts. `*out_defined` is 0 when `<g,g>` is too small to divide by.
///
/// # Safety
/// The three vectors must hold `len` doubles; out pointers must be valid
/// for writes.
#[no_mangle]
pub unsafe extern "C" fn gl_fraction_stats(
    g: *const f64,
    gp: *const f64,
    gc: *const f64,
    len: usize,
    out_f_p: *mut f64,
    out_f_c: *mut f64,
    out_defined: *mut i32,
) -> GlStatus {
    guard(|| {
        let g = slice(g, len, "g")?;
        let gp = slice(gp, len, "gp")?;
        let gc = slice(gc, len, "gc")?;
        let stats = fraction_stats(g, gp, gc).map_err(|e| Failure::invalid(e.to_string()))?;
        let (fp, fc) = stats.unwrap_or((f64::NAN, f64::NAN));
        out(out_f_p, "out_f_p", fp)?;
        out(out_f_c, "out_f_c", fc)?;
        out(out_defined, "out_defined", i32::from(stats.is_some()))
    })
}

/// Runs the experiment described by a `key = value` config file and writes
/// its logs into `out_dir`.
///
/// # Safety
/// Both arguments must be NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn gl_run_experiment(config_path: *const c_char, out_dir: *const c_char) -> GlStatus {
    guard(|| {
        let cfg = TrainConfig::load(path(config_path, "config_path")?)?;
        let dir = path(out_dir, "out_dir")?;
        run_experiment(&cfg)?.write(&dir)?;
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn message() -> String {
        let p = gl_last_error_message();
        assert!(!p.is_null());
        unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
    }

    #[test]
    fn status_codes_are_stable() {
        assert_eq!(GlStatus::Ok as i32, 0);
        assert_eq!(GlStatus::Panic as i32, 7);
    }

    #[test]
    fn null_out_pointer_is_reported() {
        let s = unsafe { gl_proper_accuracy(0.5, 10, ptr::null_mut()) };
        assert_eq!(s, GlStatus::NullPointer);
        assert!(message().contains("out_accuracy"));
    }

    #[test]
    fn success_clears_message() {
        let mut a = 0.0;
        unsafe {
            assert_eq!(gl_proper_accuracy(2.0, 10, &mut a), GlStatus::InvalidArgument);
            assert_eq!(gl_proper_accuracy(0.5, 10, &mut a), GlStatus::Ok);
        }
        assert!(gl_last_error_message().is_null());
        assert!((a - 0.55).abs() < 1e-15);
    }
}
