//! C ABI over `adn-core`: load or create a model, remove or transfer
//! artifacts, and run the LI/NMAR baselines on HU images.
//!
//! Every function returns an [`AdnStatus`]. On failure a message is kept per
//! thread and can be read with [`adn_last_error_message`]. Images are
//! row-major `float` buffers of `height * width` HU values owned by the
//! caller. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use adn_core::adn::{read_checkpoint, transfer_artifacts, write_checkpoint, AdnConfig, Checkpoint, ModelParams};
use adn_core::baselines::{reconstruct_baseline, BaselineConfig, Method};
use adn_core::ctsim::{hu_to_unit, segment_metal, unit_to_hu};
use adn_core::error::Error;
use adn_core::harness::eval::Corrector;
use adn_core::tensor::Tensor;

/// Result of every call. Zero is success.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AdnStatus {
    Ok = 0,
    /// A required pointer was null.
    NullPointer = 1,
    /// A value was out of range, such as an image size the networks cannot
    /// take, or a path was not valid UTF-8.
    InvalidArgument = 2,
    /// Empty images or buffers whose sizes do not agree.
    Dimension = 3,
    /// A checkpoint file was malformed.
    Format = 4,
    Io = 5,
    /// A computation produced NaN or infinity.
    Numeric = 6,
    /// An internal error; the message has details.
    Internal = 7,
}

/// Sinogram-inpainting baselines.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AdnBaseline {
    Li = 0,
    Nmar = 1,
}

/// Opaque model handle. Create with [`adn_model_load`] or [`adn_model_init`],
/// release with [`adn_model_free`].
pub struct AdnModel {
    params: ModelParams<f32>,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(err: &Error) -> AdnStatus {
    match err {
        Error::Dimension(_) => AdnStatus::Dimension,
        Error::Argument(_) | Error::Config { .. } => AdnStatus::InvalidArgument,
        Error::Format { .. } => AdnStatus::Format,
        Error::Io { .. } => AdnStatus::Io,
        Error::NonFinite(_) | Error::Diverged { .. } => AdnStatus::Numeric,
        Error::Backward(_) => AdnStatus::Internal,
    }
}

struct Failure(AdnStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(AdnStatus::NullPointer, format!("{what} is null"))
}

/// Runs `f`, converting errors and panics into a status and message.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> AdnStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(String::new());
            AdnStatus::Ok
        }
        Ok(Err(Failure(status, message))) => {
            set_error(message);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            AdnStatus::Internal
        }
    }
}

unsafe fn path_arg(path: *const c_char) -> Result<String, Failure> {
    if path.is_null() {
        return Err(null("path"));
    }
    CStr::from_ptr(path)
        .to_str()
        .map(str::to_string)
        .map_err(|_| Failure(AdnStatus::InvalidArgument, "path is not valid UTF-8".into()))
}

unsafe fn image_arg(data: *const f32, height: usize, width: usize, what: &str) -> Result<Tensor<f32>, Failure> {
    if data.is_null() {
        return Err(null(what));
    }
    let n = height
        .checked_mul(width)
        .filter(|&n| n > 0)
        .ok_or_else(|| Failure(AdnStatus::Dimension, format!("image size {height}×{width} is empty or too large")))?;
    let slice = std::slice::from_raw_parts(data, n);
    Ok(Tensor::new([height, width], slice.to_vec())?)
}

unsafe fn write_image(out: *mut f32, image: &Tensor<f32>) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("output"));
    }
    ptr::copy_nonoverlapping(image.data().as_ptr(), out, image.numel());
    Ok(())
}

unsafe fn model_ref<'a>(model: *const AdnModel) -> Result<&'a AdnModel, Failure> {
    model.as_ref().ok_or_else(|| null("model"))
}

/// Message of the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn adn_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn adn_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads an `ADNC` checkpoint into a new handle stored in `*out`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn adn_model_load(path: *const c_char, out: *mut *mut AdnModel) -> AdnStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let ck = read_checkpoint(path_arg(path)?)?;
        *out = Box::into_raw(Box::new(AdnModel { params: ck.params }));
        Ok(())
    })
}

/// Creates a freshly initialized model. The default architecture is width
/// 64 with 4 residual blocks.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn adn_model_init(
    width: usize,
    res_blocks: usize,
    seed: u64,
    out: *mut *mut AdnModel,
) -> AdnStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let params = ModelParams::init(AdnConfig { width, res_blocks }, seed)?;
        *out = Box::into_raw(Box::new(AdnModel { params }));
        Ok(())
    })
}

/// Writes the model parameters (no optimizer state) as an `ADNC` file.
///
/// # Safety
/// `model` must come from this library; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn adn_model_save(model: *const AdnModel, path: *const c_char) -> AdnStatus {
    guard(|| {
        let m = model_ref(model)?;
        let ck = Checkpoint { params: m.params.clone(), optimizer: Default::default() };
        write_checkpoint(path_arg(path)?, &ck)?;
        Ok(())
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `model` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn adn_model_free(model: *mut AdnModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Total number of scalar parameters.
///
/// # Safety
/// `model` must come from this library and `out` be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn adn_model_parameter_count(model: *const AdnModel, out: *mut u64) -> AdnStatus {
    guard(|| {
        let m = model_ref(model)?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = m.params.count() as u64;
        Ok(())
    })
}

/// Removes artifacts from one HU image. Pixels above the metal threshold are
/// copied through unchanged. Height and width must be multiples of 4.
///
/// # Safety
/// `input` and `output` must each hold `height * width` floats.
#[no_mangle]
pub unsafe extern "C" fn adn_remove_artifacts(
    model: *const AdnModel,
    input: *const f32,
    height: usize,
    width: usize,
    output: *mut f32,
) -> AdnStatus {
    guard(|| {
        let m = model_ref(model)?;
        let image = image_arg(input, height, width, "input")?;
        let metal = segment_metal(&image)?.mask;
        let out = Corrector::Adn(&m.params).correct(&image, &metal)?;
        write_image(output, &out)
    })
}

/// Applies the artifacts of `artifact` to the artifact-free `clean` image.
///
/// # Safety
/// `artifact`, `clean` and `output` must each hold `height * width` floats.
#[no_mangle]
pub unsafe extern "C" fn adn_transfer_artifacts(
    model: *const AdnModel,
    artifact: *const f32,
    clean: *const f32,
    height: usize,
    width: usize,
    output: *mut f32,
) -> AdnStatus {
    guard(|| {
        let m = model_ref(model)?;
        let xa = image_arg(artifact, height, width, "artifact")?;
        let y = image_arg(clean, height, width, "clean")?;
        let batch = |t: &Tensor<f32>| hu_to_unit(t).reshape([1, 1, height, width]);
        let moved = transfer_artifacts(&m.params, &batch(&xa)?, &batch(&y)?)?;
        write_image(output, &unit_to_hu(&moved.reshape([height, width])?))
    })
}

/// Corrects a square HU image with linear-interpolation or normalized
/// sinogram inpainting.
///
/// # Safety
/// `input` and `output` must each hold `size * size` floats.
#[no_mangle]
pub unsafe extern "C" fn adn_baseline(
    method: AdnBaseline,
    input: *const f32,
    size: usize,
    output: *mut f32,
) -> AdnStatus {
    guard(|| {
        let image = image_arg(input, size, size, "input")?;
        let method = match method {
            AdnBaseline::Li => Method::Li,
            AdnBaseline::Nmar => Method::Nmar,
        };
        let out = reconstruct_baseline(&image, method, &BaselineConfig::for_size(size))?;
        write_image(output, &out)
    })
}
