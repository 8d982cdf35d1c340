//! C ABI over the `dragguide` engine.
//!
//! Objects cross the boundary as opaque handles created by `dg_*_new` or
//! `dg_*_load` and released with the matching `dg_*_free`. Every fallible
//! call returns a [`DgStatus`]; on failure a description of the most recent
//! error on the calling thread is available from [`dg_last_error_message`].
//!
//! Arrays are caller-owned, contiguous, channel-major `f64` buffers. Output
//! buffers must hold exactly the stated number of elements and may not
//! alias inputs.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use dragguide::denoiser::{Denoiser, MixtureDenoiser, NoisePrediction};
use dragguide::sampler::{self, noise_init};
use dragguide::surrogate::SurrogateModel;
use dragguide::{
    make_schedule, run_sampler, DragObjective, Error, GuidanceWeights, ImageTensor, NoiseSchedule, SamplerConfig,
    SamplerKind, ScheduleKind,
};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DgStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    ShapeMismatch = 3,
    NonFinite = 4,
    StepOutOfRange = 5,
    NoMatchingComponent = 6,
    NotGuidable = 7,
    Io = 8,
    Format = 9,
    Data = 10,
    Panic = 11,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DgScheduleKind {
    LogLinear = 0,
    Linear = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DgSamplerKind {
    Ddim = 0,
    DdimPgdForm = 1,
    GradientEstimation = 2,
}

/// Opaque noise schedule `σ_0 < … < σ_T`.
pub struct DgSchedule(NoiseSchedule);

/// Opaque exact mixture denoiser.
pub struct DgMixture(MixtureDenoiser);

/// Opaque trained drag surrogate.
pub struct DgModel(SurrogateModel);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

fn clear_last_error() {
    LAST_ERROR.with(|slot| *slot.borrow_mut() = None);
}

struct Failure(DgStatus, String);

impl From<Error> for Failure {
    fn from(err: Error) -> Self {
        let status = match &err {
            Error::InvalidArgument(_) => DgStatus::InvalidArgument,
            Error::ShapeMismatch { .. } => DgStatus::ShapeMismatch,
            Error::NonFinite(_) => DgStatus::NonFinite,
            Error::StepOutOfRange { .. } => DgStatus::StepOutOfRange,
            Error::NoMatchingComponent(_) => DgStatus::NoMatchingComponent,
            Error::NotGuidable(_) => DgStatus::NotGuidable,
            Error::Io { .. } => DgStatus::Io,
            Error::Format(_) => DgStatus::Format,
            Error::Data { .. } => DgStatus::Data,
        };
        Failure(status, err.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(DgStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(DgStatus::InvalidArgument, msg.into())
}

type FfiResult<T> = Result<T, Failure>;

/// Runs `body`, converting errors and panics into a status code.
fn guard(body: impl FnOnce() -> FfiResult<()>) -> DgStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => {
            clear_last_error();
            DgStatus::Ok
        }
        Ok(Err(Failure(status, message))) => {
            set_last_error(message);
            status
        }
        Err(payload) => {
            let message = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("internal panic: {message}"));
            DgStatus::Panic
        }
    }
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> FfiResult<&'a T> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn input<'a>(p: *const f64, len: usize, what: &str) -> FfiResult<&'a [f64]> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn output<'a>(p: *mut f64, len: usize, what: &str) -> FfiResult<&'a mut [f64]> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn opt_str<'a>(p: *const c_char, what: &str) -> FfiResult<Option<&'a str>> {
    if p.is_null() {
        return Ok(None);
    }
    CStr::from_ptr(p)
        .to_str()
        .map(Some)
        .map_err(|_| invalid(format!("{what} is not valid UTF-8")))
}

unsafe fn path(p: *const c_char) -> FfiResult<PathBuf> {
    opt_str(p, "path")?.map(PathBuf::from).ok_or_else(|| null("path"))
}

unsafe fn store<T>(out: *mut *mut T, value: T) -> FfiResult<()> {
    if out.is_null() {
        return Err(null("output handle pointer"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

fn tensor(data: &[f64], shape: (usize, usize, usize)) -> FfiResult<ImageTensor> {
    Ok(ImageTensor::from_vec(shape.0, shape.1, shape.2, data.to_vec())?)
}

fn flat(data: &[f64]) -> FfiResult<ImageTensor> {
    Ok(ImageTensor::from_flat(data.to_vec())?)
}

fn shape_len(c: usize, h: usize, w: usize) -> FfiResult<usize> {
    c.checked_mul(h)
        .and_then(|v| v.checked_mul(w))
        .ok_or_else(|| invalid("shape overflows size_t"))
}

fn emit(out: &mut [f64], value: &ImageTensor) {
    out.copy_from_slice(value.as_slice());
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn dg_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or NULL after a
/// successful call. Valid until the next `dg_*` call on the same thread.
#[no_mangle]
pub extern "C" fn dg_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Builds a schedule with `steps` intervals from `sigma_min` to `sigma_max`.
///
/// # Safety
/// `out` must be a valid pointer to writable handle storage.
#[no_mangle]
pub unsafe extern "C" fn dg_schedule_new(
    kind: DgScheduleKind,
    steps: usize,
    sigma_min: f64,
    sigma_max: f64,
    out: *mut *mut DgSchedule,
) -> DgStatus {
    guard(|| {
        let kind = match kind {
            DgScheduleKind::LogLinear => ScheduleKind::LogLinear,
            DgScheduleKind::Linear => ScheduleKind::Linear,
        };
        store(out, DgSchedule(make_schedule(kind, steps, sigma_min, sigma_max)?))
    })
}

/// Wraps explicit noise levels `sigmas[0..len]`, strictly increasing.
///
/// # Safety
/// `sigmas` must point to `len` readable doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dg_schedule_from_sigmas(
    sigmas: *const f64,
    len: usize,
    out: *mut *mut DgSchedule,
) -> DgStatus {
    guard(|| {
        let s = input(sigmas, len, "sigmas")?;
        store(out, DgSchedule(NoiseSchedule::from_sigmas(s.to_vec())?))
    })
}

/// # Safety
/// `schedule` must be NULL or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dg_schedule_free(schedule: *mut DgSchedule) {
    if !schedule.is_null() {
        drop(Box::from_raw(schedule));
    }
}

/// Number of steps `T`, or 0 for a NULL handle.
///
/// # Safety
/// `schedule` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn dg_schedule_steps(schedule: *const DgSchedule) -> usize {
    schedule.as_ref().map_or(0, |s| s.0.steps())
}

/// # Safety
/// `schedule` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dg_schedule_sigma(schedule: *const DgSchedule, t: usize, out: *mut f64) -> DgStatus {
    guard(|| {
        let s = &handle(schedule, "schedule")?.0;
        if t > s.steps() {
            return Err(Failure(
                DgStatus::StepOutOfRange,
                format!("step index {t} out of range 0..={}", s.steps()),
            ));
        }
        *output(out, 1, "out")?.first_mut().expect("length one") = s.sigma(t);
        Ok(())
    })
}

/// Loads a mixture description from a JSON file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dg_mixture_load(path_: *const c_char, out: *mut *mut DgMixture) -> DgStatus {
    guard(|| store(out, DgMixture(MixtureDenoiser::load(&path(path_)?)?)))
}

/// Equal-weight point masses at `n_points` images of shape `c×h×w`, stored
/// back to back in `points`.
///
/// # Safety
/// `points` must hold `n_points·c·h·w` readable doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dg_mixture_empirical(
    points: *const f64,
    n_points: usize,
    channels: usize,
    height: usize,
    width: usize,
    out: *mut *mut DgMixture,
) -> DgStatus {
    guard(|| {
        let d = shape_len(channels, height, width)?;
        let total = d
            .checked_mul(n_points)
            .ok_or_else(|| invalid("point buffer overflows size_t"))?;
        let data = input(points, total, "points")?;
        let images = data
            .chunks_exact(d.max(1))
            .map(|chunk| tensor(chunk, (channels, height, width)))
            .collect::<FfiResult<Vec<_>>>()?;
        store(out, DgMixture(MixtureDenoiser::empirical(&images)?))
    })
}

/// # Safety
/// `mixture` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn dg_mixture_free(mixture: *mut DgMixture) {
    if !mixture.is_null() {
        drop(Box::from_raw(mixture));
    }
}

/// Writes the state shape accepted by the mixture.
///
/// # Safety
/// `mixture` must be live; the three outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn dg_mixture_shape(
    mixture: *const DgMixture,
    channels: *mut usize,
    height: *mut usize,
    width: *mut usize,
) -> DgStatus {
    guard(|| {
        let (c, h, w) = handle(mixture, "mixture")?.0.shape();
        for (p, v) in [(channels, c), (height, h), (width, w)] {
            *p.as_mut().ok_or_else(|| null("shape output"))? = v;
        }
        Ok(())
    })
}

/// Exact noise prediction `ε̂(y, σ)`. `condition` may be NULL for the
/// unconditional model.
///
/// # Safety
/// `y` and `out` must each hold `len` doubles, where `len` equals the
/// mixture dimension; `condition` must be NULL or NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn dg_mixture_predict_epsilon(
    mixture: *const DgMixture,
    y: *const f64,
    len: usize,
    sigma: f64,
    condition: *const c_char,
    out: *mut f64,
) -> DgStatus {
    guard(|| {
        let m = &handle(mixture, "mixture")?.0;
        let shape = m.shape();
        if len != m.dim() {
            return Err(Error::ShapeMismatch {
                expected: shape,
                got: (1, 1, len),
            }
            .into());
        }
        let y = tensor(input(y, len, "y")?, shape)?;
        let eps = m.predict_epsilon(&y, sigma, opt_str(condition, "condition")?)?;
        emit(output(out, len, "out")?, &eps);
        Ok(())
    })
}

/// Loads a surrogate saved by the `train` command.
///
/// # Safety
/// `path` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dg_model_load(path_: *const c_char, out: *mut *mut DgModel) -> DgStatus {
    guard(|| store(out, DgModel(SurrogateModel::load(&path(path_)?)?)))
}

/// # Safety
/// `model` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn dg_model_free(model: *mut DgModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// 1 when the model exposes an image gradient, 0 otherwise or for NULL.
///
/// # Safety
/// `model` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn dg_model_is_guidable(model: *const DgModel) -> i32 {
    model.as_ref().map_or(0, |m| i32::from(m.0.is_guidable()))
}

/// Predicted drag of one `c×h×w` image.
///
/// # Safety
/// `image` must hold `c·h·w` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dg_model_predict_drag(
    model: *const DgModel,
    image: *const f64,
    channels: usize,
    height: usize,
    width: usize,
    out: *mut f64,
) -> DgStatus {
    guard(|| {
        let m = &handle(model, "model")?.0;
        let len = shape_len(channels, height, width)?;
        let img = tensor(input(image, len, "image")?, (channels, height, width))?;
        output(out, 1, "out")?[0] = m.predict_drag(&img)?;
        Ok(())
    })
}

/// Gradient of the predicted drag with respect to every pixel.
///
/// # Safety
/// `image` and `grad_out` must each hold `c·h·w` doubles.
#[no_mangle]
pub unsafe extern "C" fn dg_model_grad_drag(
    model: *const DgModel,
    image: *const f64,
    channels: usize,
    height: usize,
    width: usize,
    grad_out: *mut f64,
) -> DgStatus {
    guard(|| {
        let m = &handle(model, "model")?.0;
        let len = shape_len(channels, height, width)?;
        let img = tensor(input(image, len, "image")?, (channels, height, width))?;
        emit(output(grad_out, len, "grad_out")?, &m.grad_drag(&img)?);
        Ok(())
    })
}

/// Plain DDIM step `x_{t−1} = x_t − (σ_t − σ_{t−1}) ε̂`.
///
/// # Safety
/// `x`, `eps` and `out` must each hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn dg_ddim_step(
    schedule: *const DgSchedule,
    t: usize,
    x: *const f64,
    eps: *const f64,
    len: usize,
    out: *mut f64,
) -> DgStatus {
    guard(|| {
        let s = &handle(schedule, "schedule")?.0;
        let x = flat(input(x, len, "x")?)?;
        let eps = NoisePrediction::new(flat(input(eps, len, "eps")?)?)?;
        emit(output(out, len, "out")?, &sampler::ddim_step(&x, t, s, &eps)?);
        Ok(())
    })
}

type StepFn = fn(
    &ImageTensor,
    usize,
    &NoiseSchedule,
    &NoisePrediction,
    &ImageTensor,
    &GuidanceWeights,
) -> dragguide::Result<ImageTensor>;

#[allow(clippy::too_many_arguments)]
unsafe fn guided_like(
    step: StepFn,
    schedule: *const DgSchedule,
    t: usize,
    x: *const f64,
    eps: *const f64,
    drag_grad: *const f64,
    len: usize,
    eta0: f64,
    out: *mut f64,
) -> DgStatus {
    guard(|| {
        let s = &handle(schedule, "schedule")?.0;
        let weights = GuidanceWeights::default().with_eta0(eta0);
        weights.validate()?;
        let x = flat(input(x, len, "x")?)?;
        let eps = NoisePrediction::new(flat(input(eps, len, "eps")?)?)?;
        let g = flat(input(drag_grad, len, "drag_grad")?)?;
        emit(output(out, len, "out")?, &step(&x, t, s, &eps, &g, &weights)?);
        Ok(())
    })
}

/// Drag-guided step in noise-prediction form.
///
/// # Safety
/// `x`, `eps`, `drag_grad` and `out` must each hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn dg_guided_step(
    schedule: *const DgSchedule,
    t: usize,
    x: *const f64,
    eps: *const f64,
    drag_grad: *const f64,
    len: usize,
    eta0: f64,
    out: *mut f64,
) -> DgStatus {
    guided_like(sampler::guided_step, schedule, t, x, eps, drag_grad, len, eta0, out)
}

/// The same update in projected-gradient form.
///
/// # Safety
/// `x`, `eps`, `drag_grad` and `out` must each hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn dg_pgd_step(
    schedule: *const DgSchedule,
    t: usize,
    x: *const f64,
    eps: *const f64,
    drag_grad: *const f64,
    len: usize,
    eta0: f64,
    out: *mut f64,
) -> DgStatus {
    guided_like(sampler::pgd_step, schedule, t, x, eps, drag_grad, len, eta0, out)
}

/// Parameters of a full sampling run.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct DgSampleOptions {
    pub kind: DgSamplerKind,
    pub eta0: f64,
    pub cfg_w: f64,
    pub ge_gamma: f64,
    pub seed: u64,
    /// NULL for unconditional sampling.
    pub condition: *const c_char,
}

/// Options matching the command-line defaults, with guidance disabled.
#[no_mangle]
pub extern "C" fn dg_sample_options_default() -> DgSampleOptions {
    let w = GuidanceWeights::default();
    DgSampleOptions {
        kind: DgSamplerKind::Ddim,
        eta0: 0.0,
        cfg_w: w.cfg_w,
        ge_gamma: w.ge_gamma,
        seed: 0,
        condition: ptr::null(),
    }
}

/// Samples from `σ_T ε` down to `t = 0` and writes the final state.
///
/// `model` may be NULL for unguided sampling. When it is given and
/// `drag_out` is not NULL, the predicted drag of the final state is
/// written there.
///
/// # Safety
/// `final_out` must hold `len` doubles, `len` equal to the mixture
/// dimension; `options` must be readable.
#[no_mangle]
pub unsafe extern "C" fn dg_sample(
    mixture: *const DgMixture,
    model: *const DgModel,
    schedule: *const DgSchedule,
    options: *const DgSampleOptions,
    final_out: *mut f64,
    len: usize,
    drag_out: *mut f64,
) -> DgStatus {
    guard(|| {
        let m = &handle(mixture, "mixture")?.0;
        let s = &handle(schedule, "schedule")?.0;
        let o = handle(options, "options")?;
        let model = model.as_ref().map(|h| &h.0);
        if len != m.dim() {
            return Err(Error::ShapeMismatch {
                expected: m.shape(),
                got: (1, 1, len),
            }
            .into());
        }
        let kind = match o.kind {
            DgSamplerKind::Ddim => SamplerKind::Ddim,
            DgSamplerKind::DdimPgdForm => SamplerKind::DdimPgdForm,
            DgSamplerKind::GradientEstimation => SamplerKind::GradientEstimation,
        };
        let mut config = SamplerConfig::new(
            s.clone(),
            GuidanceWeights::new(o.eta0, o.cfg_w, o.ge_gamma)?,
            kind,
            o.seed,
        );
        config.condition = opt_str(o.condition, "condition")?.map(str::to_owned);
        if o.eta0 > 0.0 && model.is_none() {
            return Err(invalid("eta0 > 0 requires a model"));
        }
        let init = noise_init(m.shape(), s.sigma_max(), o.seed)?;
        let target = model.map(|md| md as &dyn DragObjective);
        let traj = run_sampler(m, target, &config, &init)?;
        emit(output(final_out, len, "final_out")?, &traj.final_state);
        if let (Some(md), Some(d)) = (model, drag_out.as_mut()) {
            *d = md.predict_drag(&traj.final_state)?;
        }
        Ok(())
    })
}
