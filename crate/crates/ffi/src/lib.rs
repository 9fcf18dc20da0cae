//! C interface to `daynight`.
//!
//! Every function returns a [`DnStatus`]; on failure the message is kept in
//! thread-local storage and can be copied out with [`dn_last_error`].
//! Environments and models are opaque handles released with their `_free`
//! function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::slice;

use daynight::agent::{gae, Agent};
use daynight::config::ExperimentConfig;
use daynight::dreaming::{imagine_rollout, AugmentationMode, DreamStreams};
use daynight::encodings::{symexp, symlog, two_hot_decode, two_hot_encode, BucketSpec};
use daynight::envs::{make_env, shape_reward, Environment, LevelMode, ShapingConfig, FRAME_LEN};
use daynight::orchestrator::export::export_dreams;
use daynight::orchestrator::load_models;
use daynight::worldmodel::WorldModel;
use daynight::Error;

/// Result of every call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DnStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Domain = 4,
    Environment = 5,
    Checkpoint = 6,
    Io = 7,
    Internal = 8,
    Panic = 9,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(err: &Error) -> DnStatus {
    match err {
        Error::Config(_) | Error::ConfigList(_) => DnStatus::Config,
        Error::Domain(_) => DnStatus::Domain,
        Error::Shape(_) => DnStatus::InvalidArgument,
        Error::Env(_) => DnStatus::Environment,
        Error::Checkpoint(_) => DnStatus::Checkpoint,
        Error::Io { .. } => DnStatus::Io,
        _ => DnStatus::Internal,
    }
}

struct Failure(DnStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(DnStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(DnStatus::InvalidArgument, msg.into())
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> DnStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(String::new());
            DnStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("panic: {msg}"));
            DnStatus::Panic
        }
    }
}

unsafe fn out<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
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

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(format!("{what} is not valid UTF-8")))
}

/// Copies the last error message of this thread into `buf` (NUL-terminated,
/// truncated to `len - 1` bytes) and returns the full message length.
/// `buf` may be null to query the length.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn dn_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr(), buf.cast::<u8>(), n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

// ---------------------------------------------------------------------------
// Pure functions

/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dn_symlog(x: f64, out: *mut f64) -> DnStatus {
    guard(|| {
        *self::out(out, "out")? = symlog(x)?;
        Ok(())
    })
}

/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dn_symexp(y: f64, out: *mut f64) -> DnStatus {
    guard(|| {
        *self::out(out, "out")? = symexp(y)?;
        Ok(())
    })
}

/// Two-hot encoding of `value` over `bins` buckets evenly spaced in `[lo, hi]`.
///
/// # Safety
/// `weights` must point to `bins` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn dn_two_hot_encode(value: f64, bins: usize, lo: f64, hi: f64, weights: *mut f64) -> DnStatus {
    guard(|| {
        let spec = BucketSpec::new(bins, lo, hi)?;
        let dst = output(weights, bins, "weights")?;
        dst.copy_from_slice(two_hot_encode(value, &spec)?.weights());
        Ok(())
    })
}

/// Expected bucket value under `weights`.
///
/// # Safety
/// `weights` must point to `bins` doubles and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn dn_two_hot_decode(weights: *const f64, bins: usize, lo: f64, hi: f64, out: *mut f64) -> DnStatus {
    guard(|| {
        let spec = BucketSpec::new(bins, lo, hi)?;
        let w = input(weights, bins, "weights")?;
        *self::out(out, "out")? = two_hot_decode(w, &spec)?;
        Ok(())
    })
}

/// Generalized advantage estimates for `len` transitions. `values` holds
/// `len + 1` entries, the last being the bootstrap value.
///
/// # Safety
/// `rewards`, `continues` and `advantages` must hold `len` doubles and
/// `values` `len + 1`.
#[no_mangle]
pub unsafe extern "C" fn dn_gae(
    rewards: *const f64,
    values: *const f64,
    continues: *const f64,
    len: usize,
    gamma: f64,
    lambda: f64,
    advantages: *mut f64,
) -> DnStatus {
    guard(|| {
        let r = input(rewards, len, "rewards")?;
        let v = input(values, len + 1, "values")?;
        let c = input(continues, len, "continues")?;
        let dst = output(advantages, len, "advantages")?;
        dst.copy_from_slice(&gae(r, v, c, gamma, lambda)?);
        Ok(())
    })
}

/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dn_shape_reward(
    reward: f64,
    cont: bool,
    success: bool,
    failure_penalty: f64,
    reward_scale: f64,
    out: *mut f64,
) -> DnStatus {
    guard(|| {
        let cfg = ShapingConfig { failure_penalty, reward_scale };
        let errs = cfg.validate();
        if !errs.is_empty() {
            return Err(Failure(DnStatus::Config, errs.join("; ")));
        }
        *self::out(out, "out")? = shape_reward(reward, cont, success, &cfg);
        Ok(())
    })
}

// ---------------------------------------------------------------------------
// Environments

/// Opaque environment handle.
pub struct DnEnv {
    inner: Box<dyn Environment>,
}

/// Bytes in one observation (`64 * 64 * 3`, row-major RGB).
#[no_mangle]
pub extern "C" fn dn_observation_len() -> usize {
    FRAME_LEN
}

/// Creates an environment by name. `test_levels` selects the full level
/// distribution instead of the training subset.
///
/// # Safety
/// `name` must be a NUL-terminated string and `env` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dn_env_create(
    name: *const c_char,
    train_levels: u64,
    test_levels: bool,
    env: *mut *mut DnEnv,
) -> DnStatus {
    guard(|| {
        let slot = out(env, "env")?;
        *slot = ptr::null_mut();
        let mode = if test_levels { LevelMode::Test } else { LevelMode::Train };
        let inner = make_env(text(name, "name")?, train_levels, mode)?;
        *slot = Box::into_raw(Box::new(DnEnv { inner }));
        Ok(())
    })
}

/// # Safety
/// `env` must be null or a handle from [`dn_env_create`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dn_env_free(env: *mut DnEnv) {
    if !env.is_null() {
        drop(Box::from_raw(env));
    }
}

/// # Safety
/// `env` must be a live handle and `count` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dn_env_action_count(env: *const DnEnv, count: *mut usize) -> DnStatus {
    guard(|| {
        let env = env.as_ref().ok_or_else(|| null("env"))?;
        *out(count, "count")? = env.inner.spec().action_count;
        Ok(())
    })
}

/// Resets to the level generated from `level_seed` and writes the first
/// observation.
///
/// # Safety
/// `env` must be a live handle; `observation` must hold
/// [`dn_observation_len`] bytes.
#[no_mangle]
pub unsafe extern "C" fn dn_env_reset(env: *mut DnEnv, level_seed: u64, observation: *mut u8) -> DnStatus {
    guard(|| {
        let env = env.as_mut().ok_or_else(|| null("env"))?;
        let dst = output(observation, FRAME_LEN, "observation")?;
        dst.copy_from_slice(env.inner.reset(level_seed)?.bytes());
        Ok(())
    })
}

/// Takes one step. `cont` is false exactly when the episode ended.
///
/// # Safety
/// `env` must be a live handle; `observation` must hold
/// [`dn_observation_len`] bytes; the scalar outputs must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn dn_env_step(
    env: *mut DnEnv,
    action: usize,
    observation: *mut u8,
    reward: *mut f64,
    cont: *mut bool,
    success: *mut bool,
) -> DnStatus {
    guard(|| {
        let env = env.as_mut().ok_or_else(|| null("env"))?;
        let dst = output(observation, FRAME_LEN, "observation")?;
        let (reward, cont, success) = (out(reward, "reward")?, out(cont, "cont")?, out(success, "success")?);
        let step = env.inner.step(action)?;
        dst.copy_from_slice(step.observation.bytes());
        *reward = step.reward;
        *cont = step.cont;
        *success = step.success;
        Ok(())
    })
}

// ---------------------------------------------------------------------------
// Trained models

/// Opaque handle to a world model and agent restored from a checkpoint.
pub struct DnModel {
    config: ExperimentConfig,
    world: WorldModel,
    agent: Agent,
    dreams: u64,
}

fn augmentation(mode: *const c_char) -> Result<AugmentationMode, Failure> {
    let name = unsafe { text(mode, "mode")? };
    Ok(AugmentationMode::parse(name)?)
}

/// # Safety
/// `path` must be a NUL-terminated string and `model` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dn_model_load(path: *const c_char, model: *mut *mut DnModel) -> DnStatus {
    guard(|| {
        let slot = out(model, "model")?;
        *slot = ptr::null_mut();
        let (config, world, agent) = load_models(Path::new(text(path, "path")?))?;
        *slot = Box::into_raw(Box::new(DnModel { config, world, agent, dreams: 0 }));
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a handle from [`dn_model_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dn_model_free(model: *mut DnModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Imagines `batch` trajectories from random latent states under the
/// augmentation `mode` and writes their mean per-step reward. Successive
/// calls draw fresh randomness.
///
/// # Safety
/// `model` must be a live handle, `mode` a NUL-terminated string and
/// `mean_reward` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dn_model_dream(
    model: *mut DnModel,
    mode: *const c_char,
    batch: usize,
    mean_reward: *mut f64,
) -> DnStatus {
    guard(|| {
        let m = model.as_mut().ok_or_else(|| null("model"))?;
        let mode = augmentation(mode)?;
        let dst = out(mean_reward, "mean_reward")?;
        if batch == 0 {
            return Err(invalid("batch must be positive"));
        }
        let cfg = m.config.dream(mode);
        let mut streams = DreamStreams::new(m.config.seed ^ 0x5eed_0ff1, m.dreams);
        m.dreams += 1;
        *dst = imagine_rollout(&m.world, &m.agent, batch, &cfg, &mut streams)?.mean_reward();
        Ok(())
    })
}

/// Writes a PNG gallery of decoded dream states to `out_dir`.
///
/// # Safety
/// `model` must be a live handle; `mode` and `out_dir` NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn dn_model_export_dreams(
    model: *const DnModel,
    mode: *const c_char,
    count: usize,
    out_dir: *const c_char,
) -> DnStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let mode = augmentation(mode)?;
        let dir = Path::new(text(out_dir, "out_dir")?);
        export_dreams(&m.world, &m.agent, &m.config, mode, count, dir)?;
        Ok(())
    })
}
