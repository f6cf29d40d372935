//! C ABI over the mzero environments, network, search and target helpers.
//!
//! Every function returns an [`MzStatus`]; on failure the message is kept in a
//! thread-local slot readable with [`mz_last_error`]. Handles are opaque and
//! must be released with their matching `*_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use mzero::envs::{Env, EnvKind, Environment, Observation};
use mzero::harness::{preset_config, run_seed, Preset, RunConfig};
use mzero::mcts::run_search;
use mzero::net::{load_checkpoint, MuZeroNet};
use mzero::replay::n_step_value;
use mzero::trainer::{scale_weights, LossWeights};
use mzero::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Result code of every exported function.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MzStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    InvalidAction = 3,
    Terminal = 4,
    BufferTooSmall = 5,
    Config = 6,
    Checkpoint = 7,
    NonFinite = 8,
    Io = 9,
    Panic = 10,
}

/// Outcome of one environment step.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MzStep {
    pub reward: f64,
    pub done: bool,
}

/// Opaque environment handle.
pub struct MzEnv(Env);

/// Opaque run configuration handle.
pub struct MzConfig(RunConfig);

/// Opaque network handle.
pub struct MzNet(MuZeroNet);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> MzStatus {
    match e {
        Error::InvalidAction { .. } | Error::OccupiedCell(_) => MzStatus::InvalidAction,
        Error::Terminal => MzStatus::Terminal,
        Error::Shape { .. } => MzStatus::InvalidArgument,
        Error::NonFinite { .. } => MzStatus::NonFinite,
        Error::Config(_) | Error::UnknownPreset(_) | Error::RunFailed { .. } => MzStatus::Config,
        Error::Checkpoint(_) => MzStatus::Checkpoint,
        Error::Csv { .. } | Error::Io(_) => MzStatus::Io,
    }
}

struct Fail(MzStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(MzStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> MzStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => MzStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("panic inside mzero");
            MzStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| {
        Fail(
            MzStatus::InvalidArgument,
            format!("{what} is not valid UTF-8"),
        )
    })
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn handle_mut<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn slice_arg<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

/// Copies `src` into a caller buffer, reporting the needed length in `out_len`.
unsafe fn write_out<T: Copy>(
    src: &[T],
    out: *mut T,
    cap: usize,
    out_len: *mut usize,
) -> Result<(), Fail> {
    if !out_len.is_null() {
        *out_len = src.len();
    }
    if cap < src.len() {
        return Err(Fail(
            MzStatus::BufferTooSmall,
            format!("buffer holds {cap} elements, {} needed", src.len()),
        ));
    }
    if !src.is_empty() {
        if out.is_null() {
            return Err(null("output buffer"));
        }
        ptr::copy_nonoverlapping(src.as_ptr(), out, src.len());
    }
    Ok(())
}

unsafe fn put_handle<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("output handle"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

/// Message of the last failure on this thread. Valid until the next failing call.
#[no_mangle]
pub extern "C" fn mz_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn mz_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Creates an environment by name (`cartpole`, `tictactoe`, `minigrid`).
/// `grid_size` is only read for MiniGrid.
///
/// # Safety
/// `kind` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn mz_env_new(
    kind: *const c_char,
    grid_size: usize,
    out: *mut *mut MzEnv,
) -> MzStatus {
    guard(|| {
        let kind: EnvKind = str_arg(kind, "kind")?.parse()?;
        put_handle(out, MzEnv(Env::new(kind, grid_size)?))
    })
}

/// # Safety
/// `env` must be null or a handle from [`mz_env_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mz_env_free(env: *mut MzEnv) {
    if !env.is_null() {
        drop(Box::from_raw(env));
    }
}

/// # Safety
/// `env` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn mz_env_sizes(
    env: *const MzEnv,
    observation_size: *mut usize,
    action_size: *mut usize,
) -> MzStatus {
    guard(|| {
        let env = &handle(env, "env")?.0;
        if !observation_size.is_null() {
            *observation_size = env.observation_size();
        }
        if !action_size.is_null() {
            *action_size = env.action_size();
        }
        Ok(())
    })
}

/// Resets the episode and writes the first observation.
///
/// # Safety
/// `env` must be a live handle; `obs` must hold `cap` doubles.
#[no_mangle]
pub unsafe extern "C" fn mz_env_reset(
    env: *mut MzEnv,
    seed: u64,
    obs: *mut f64,
    cap: usize,
    obs_len: *mut usize,
) -> MzStatus {
    guard(|| {
        let o = handle_mut(env, "env")?.0.reset(seed);
        write_out(o.as_slice(), obs, cap, obs_len)
    })
}

/// # Safety
/// `env` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mz_env_step(env: *mut MzEnv, action: usize, out: *mut MzStep) -> MzStatus {
    guard(|| {
        let r = handle_mut(env, "env")?.0.step(action)?;
        if !out.is_null() {
            *out = MzStep {
                reward: r.reward,
                done: r.done,
            };
        }
        Ok(())
    })
}

/// # Safety
/// `env` must be a live handle; `obs` must hold `cap` doubles.
#[no_mangle]
pub unsafe extern "C" fn mz_env_observation(
    env: *const MzEnv,
    obs: *mut f64,
    cap: usize,
    obs_len: *mut usize,
) -> MzStatus {
    guard(|| {
        let o = handle(env, "env")?.0.observation();
        write_out(o.as_slice(), obs, cap, obs_len)
    })
}

/// Writes the legal action indices.
///
/// # Safety
/// `env` must be a live handle; `actions` must hold `cap` entries.
#[no_mangle]
pub unsafe extern "C" fn mz_env_legal_actions(
    env: *const MzEnv,
    actions: *mut usize,
    cap: usize,
    len: *mut usize,
) -> MzStatus {
    guard(|| {
        let legal = handle(env, "env")?.0.legal_actions()?;
        write_out(&legal, actions, cap, len)
    })
}

/// # Safety
/// `env` must be a live handle; `done` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mz_env_is_terminal(env: *const MzEnv, done: *mut bool) -> MzStatus {
    guard(|| {
        let t = handle(env, "env")?.0.is_terminal();
        if done.is_null() {
            return Err(null("done"));
        }
        *done = t;
        Ok(())
    })
}

/// Builds the preset configuration for a preset name, environment and grid size.
///
/// # Safety
/// `preset` and `env` must be NUL-terminated strings; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mz_config_preset(
    preset: *const c_char,
    env: *const c_char,
    grid_size: usize,
    out: *mut *mut MzConfig,
) -> MzStatus {
    guard(|| {
        let preset: Preset = str_arg(preset, "preset")?.parse()?;
        let env: EnvKind = str_arg(env, "env")?.parse()?;
        put_handle(out, MzConfig(preset_config(preset, env, grid_size)))
    })
}

/// Parses a configuration from TOML text.
///
/// # Safety
/// `toml` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mz_config_from_toml(
    toml: *const c_char,
    out: *mut *mut MzConfig,
) -> MzStatus {
    guard(|| {
        let cfg = RunConfig::from_toml(str_arg(toml, "toml")?)?;
        put_handle(out, MzConfig(cfg))
    })
}

/// Applies one `key=value` override (dotted keys for nested sections).
///
/// # Safety
/// `cfg` must be a live handle and `assignment` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn mz_config_set(cfg: *mut MzConfig, assignment: *const c_char) -> MzStatus {
    guard(|| {
        let cfg = handle_mut(cfg, "config")?;
        let a = str_arg(assignment, "assignment")?.to_string();
        cfg.0 = cfg.0.with_overrides(&[a])?;
        Ok(())
    })
}

/// Serialises the configuration as TOML. Free the result with [`mz_string_free`].
///
/// # Safety
/// `cfg` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mz_config_to_toml(
    cfg: *const MzConfig,
    out: *mut *mut c_char,
) -> MzStatus {
    guard(|| {
        let text = handle(cfg, "config")?.0.to_toml()?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = CString::new(text)
            .map_err(|_| Fail(MzStatus::Config, "NUL in config".into()))?
            .into_raw();
        Ok(())
    })
}

/// # Safety
/// `cfg` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mz_config_free(cfg: *mut MzConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// # Safety
/// `s` must be null or a string returned by this library.
#[no_mangle]
pub unsafe extern "C" fn mz_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Trains one seed, writing metrics and checkpoints under the config's output directory.
///
/// # Safety
/// `cfg` must be a live handle; `final_reward` may be null.
#[no_mangle]
pub unsafe extern "C" fn mz_run_seed(
    cfg: *const MzConfig,
    seed: u64,
    final_reward: *mut f64,
) -> MzStatus {
    guard(|| {
        let r = run_seed(&handle(cfg, "config")?.0, seed)?;
        if !final_reward.is_null() {
            *final_reward = r.final_reward;
        }
        Ok(())
    })
}

/// Freshly initialised network for a configuration.
///
/// # Safety
/// `cfg` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mz_net_new(
    cfg: *const MzConfig,
    seed: u64,
    out: *mut *mut MzNet,
) -> MzStatus {
    guard(|| {
        let net = MuZeroNet::new(handle(cfg, "config")?.0.net_config()?, seed)?;
        put_handle(out, MzNet(net))
    })
}

/// Loads a checkpoint written for the given configuration.
///
/// # Safety
/// `cfg` must be a live handle, `path` a NUL-terminated string, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn mz_net_load(
    cfg: *const MzConfig,
    path: *const c_char,
    out: *mut *mut MzNet,
) -> MzStatus {
    guard(|| {
        let cfg = &handle(cfg, "config")?.0;
        let ckpt = load_checkpoint(Path::new(str_arg(path, "path")?))?;
        if ckpt.config_hash != cfg.net_hash()? {
            return Err(Error::Checkpoint(
                "checkpoint was written for a different network configuration".into(),
            )
            .into());
        }
        let mut net = MuZeroNet::zeroed(cfg.net_config()?)?;
        net.params = ckpt.params;
        put_handle(out, MzNet(net))
    })
}

/// # Safety
/// `net` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mz_net_free(net: *mut MzNet) {
    if !net.is_null() {
        drop(Box::from_raw(net));
    }
}

/// Scalar value and policy probabilities for one observation.
///
/// # Safety
/// `net` must be a live handle; `obs` must hold `obs_len` doubles and `policy` `cap` doubles.
#[no_mangle]
pub unsafe extern "C" fn mz_net_initial_inference(
    net: *const MzNet,
    obs: *const f64,
    obs_len: usize,
    value: *mut f64,
    policy: *mut f64,
    cap: usize,
    policy_len: *mut usize,
) -> MzStatus {
    guard(|| {
        let net = &handle(net, "net")?.0;
        let o = Observation(slice_arg(obs, obs_len, "obs")?.to_vec());
        let out = net.initial_inference(&o)?;
        if !value.is_null() {
            *value = net.scalar_value(&out.value);
        }
        write_out(
            &mzero::net::policy_probabilities(&out.policy_logits),
            policy,
            cap,
            policy_len,
        )
    })
}

/// Runs a search from the environment's current state with the config's search settings.
/// Writes the root visit distribution and root value.
///
/// # Safety
/// All handles must be live; `policy` must hold `cap` doubles.
#[no_mangle]
pub unsafe extern "C" fn mz_search(
    net: *const MzNet,
    cfg: *const MzConfig,
    env: *const MzEnv,
    seed: u64,
    policy: *mut f64,
    cap: usize,
    policy_len: *mut usize,
    root_value: *mut f64,
) -> MzStatus {
    guard(|| {
        let net = &handle(net, "net")?.0;
        let cfg = &handle(cfg, "config")?.0;
        let env = &handle(env, "env")?.0;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r = run_search(
            net,
            &env.observation(),
            &env.legal_actions()?,
            cfg.search_config(),
            &mut rng,
        )?;
        if !root_value.is_null() {
            *root_value = r.root_value;
        }
        write_out(&r.policy, policy, cap, policy_len)
    })
}

/// Loss weights in the order alpha, beta, gamma_w, delta.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MzWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma_w: f64,
    pub delta: f64,
}

/// Normalises value and policy weight pairs to sum to one.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mz_scale_weights(w: MzWeights, out: *mut MzWeights) -> MzStatus {
    guard(|| {
        let s = scale_weights(LossWeights {
            alpha: w.alpha,
            beta: w.beta,
            gamma_w: w.gamma_w,
            delta: w.delta,
        })?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = MzWeights {
            alpha: s.alpha,
            beta: s.beta,
            gamma_w: s.gamma_w,
            delta: s.delta,
        };
        Ok(())
    })
}

/// n-step bootstrapped value at index `t` of a path of length `horizon`.
/// `rewards[j]` is the reward for the transition into index `j` (`rewards[0]` is unused);
/// both `rewards` and `values` hold `horizon + 1` entries.
///
/// # Safety
/// The buffers must hold the stated number of doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mz_n_step_value(
    rewards: *const f64,
    values: *const f64,
    horizon: usize,
    t: usize,
    n: usize,
    discount: f64,
    out: *mut f64,
) -> MzStatus {
    guard(|| {
        let rewards = slice_arg(rewards, horizon + 1, "rewards")?;
        let values = slice_arg(values, horizon + 1, "values")?;
        if t > horizon {
            return Err(Fail(
                MzStatus::InvalidArgument,
                format!("t = {t} beyond horizon {horizon}"),
            ));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        *out = n_step_value(rewards, values, t, n, discount, horizon);
        Ok(())
    })
}
