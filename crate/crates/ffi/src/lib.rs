//! C ABI over the tdmpc crate. Handles are opaque pointers owned by the
//! library; every fallible call returns a status code and leaves a
//! human-readable message for `tdmpc_last_error`. No exceptions cross the
//! boundary: panics are caught and reported as `TDMPC_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use tdmpc::error::Error;
use tdmpc::report::{certify_report, summary_report, write_csv, SummaryInputs};
use tdmpc::scenario::{load_scenario, run_scenario, BuiltScenario};
use tdmpc::sim::Trajectory;

/// Outcome of an API call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TdmpcStatus {
    TdmpcOk = 0,
    /// Malformed input: bad JSON, wrong dimensions, unknown fields.
    TdmpcInvalid = 1,
    /// The library refused the problem (uncertifiable budget, infeasible
    /// certificate, unstabilizable plant, ...).
    TdmpcRefused = 2,
    /// A numerical routine failed (ill-conditioning, divergence, stall).
    TdmpcNumerical = 3,
    /// A null handle or output pointer was passed.
    TdmpcNullArg = 4,
    /// An internal panic was caught at the boundary.
    TdmpcPanic = 5,
}

pub struct TdmpcScenario {
    scn: BuiltScenario,
}

pub struct TdmpcTrajectory {
    traj: Trajectory,
    n: usize,
    m: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(msg: &str) {
    let sanitized: String = msg.chars().map(|c| if c == '\0' { ' ' } else { c }).collect();
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

fn status_of(err: &Error) -> TdmpcStatus {
    match err {
        Error::InvalidConfig(_) | Error::Json(_) | Error::Io(_) => TdmpcStatus::TdmpcInvalid,
        _ => match err.exit_code() {
            3 => TdmpcStatus::TdmpcNumerical,
            _ => TdmpcStatus::TdmpcRefused,
        },
    }
}

fn fail(err: &Error) -> TdmpcStatus {
    set_error(&err.to_string());
    status_of(err)
}

fn guard<F: FnOnce() -> TdmpcStatus>(f: F) -> TdmpcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(_) => {
            set_error("internal panic caught at the C boundary");
            TdmpcStatus::TdmpcPanic
        }
    }
}

/// Message for the most recent failure on this thread. The pointer stays
/// valid until the next failing call from the same thread.
#[no_mangle]
pub extern "C" fn tdmpc_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Builds a scenario from a JSON document (same schema as the CLI configs).
/// On success `*out` owns the handle; release it with `tdmpc_scenario_free`.
#[no_mangle]
pub unsafe extern "C" fn tdmpc_scenario_from_json(
    json: *const c_char,
    out: *mut *mut TdmpcScenario,
) -> TdmpcStatus {
    if json.is_null() || out.is_null() {
        set_error("null argument");
        return TdmpcStatus::TdmpcNullArg;
    }
    guard(|| {
        let raw = match CStr::from_ptr(json).to_str() {
            Ok(s) => s,
            Err(_) => {
                set_error("config is not valid UTF-8");
                return TdmpcStatus::TdmpcInvalid;
            }
        };
        match load_scenario(raw) {
            Ok(scn) => {
                *out = Box::into_raw(Box::new(TdmpcScenario { scn }));
                TdmpcStatus::TdmpcOk
            }
            Err(e) => fail(&e),
        }
    })
}

#[no_mangle]
pub unsafe extern "C" fn tdmpc_scenario_free(scn: *mut TdmpcScenario) {
    if !scn.is_null() {
        drop(Box::from_raw(scn));
    }
}

#[no_mangle]
pub unsafe extern "C" fn tdmpc_scenario_state_dim(scn: *const TdmpcScenario) -> usize {
    scn.as_ref().map_or(0, |s| s.scn.model.n)
}

#[no_mangle]
pub unsafe extern "C" fn tdmpc_scenario_input_dim(scn: *const TdmpcScenario) -> usize {
    scn.as_ref().map_or(0, |s| s.scn.model.m)
}

#[no_mangle]
pub unsafe extern "C" fn tdmpc_scenario_phase_count(scn: *const TdmpcScenario) -> usize {
    scn.as_ref().map_or(0, |s| s.scn.phases.len())
}

/// True when some declared budget sits at or below its certified threshold
/// (the scenario opted in via allow_uncertified).
#[no_mangle]
pub unsafe extern "C" fn tdmpc_scenario_tainted(scn: *const TdmpcScenario) -> bool {
    scn.as_ref().is_some_and(|s| s.scn.tainted)
}

fn string_out(value: String, out: *mut *mut c_char) -> TdmpcStatus {
    let sanitized: String = value.chars().map(|c| if c == '\0' { ' ' } else { c }).collect();
    match CString::new(sanitized) {
        Ok(cstr) => {
            unsafe { *out = cstr.into_raw() };
            TdmpcStatus::TdmpcOk
        }
        Err(_) => {
            set_error("report contained an interior NUL");
            TdmpcStatus::TdmpcInvalid
        }
    }
}

/// Certificate report as a JSON string; release with `tdmpc_string_free`.
#[no_mangle]
pub unsafe extern "C" fn tdmpc_certify_json(
    scn: *const TdmpcScenario,
    out: *mut *mut c_char,
) -> TdmpcStatus {
    let Some(handle) = scn.as_ref() else {
        set_error("null scenario");
        return TdmpcStatus::TdmpcNullArg;
    };
    if out.is_null() {
        set_error("null output pointer");
        return TdmpcStatus::TdmpcNullArg;
    }
    guard(|| {
        let report = certify_report(&handle.scn);
        match serde_json::to_string_pretty(&report) {
            Ok(s) => string_out(s, out),
            Err(e) => fail(&Error::from(e)),
        }
    })
}

#[no_mangle]
pub unsafe extern "C" fn tdmpc_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Runs the scenario's closed loop. On success `*out` owns the trajectory.
#[no_mangle]
pub unsafe extern "C" fn tdmpc_simulate(
    scn: *const TdmpcScenario,
    out: *mut *mut TdmpcTrajectory,
) -> TdmpcStatus {
    let Some(handle) = scn.as_ref() else {
        set_error("null scenario");
        return TdmpcStatus::TdmpcNullArg;
    };
    if out.is_null() {
        set_error("null output pointer");
        return TdmpcStatus::TdmpcNullArg;
    }
    guard(|| match run_scenario(&handle.scn) {
        Ok(traj) => {
            let boxed = TdmpcTrajectory { traj, n: handle.scn.model.n, m: handle.scn.model.m };
            *out = Box::into_raw(Box::new(boxed));
            TdmpcStatus::TdmpcOk
        }
        Err(e) => fail(&e),
    })
}

#[no_mangle]
pub unsafe extern "C" fn tdmpc_trajectory_free(traj: *mut TdmpcTrajectory) {
    if !traj.is_null() {
        drop(Box::from_raw(traj));
    }
}

/// Number of closed-loop steps T; states run 0..=T.
#[no_mangle]
pub unsafe extern "C" fn tdmpc_trajectory_steps(traj: *const TdmpcTrajectory) -> usize {
    traj.as_ref().map_or(0, |t| t.traj.t())
}

/// Copies state x_k (k in 0..=T) into `buf`, which must hold `len` doubles
/// matching the state dimension.
#[no_mangle]
pub unsafe extern "C" fn tdmpc_trajectory_state(
    traj: *const TdmpcTrajectory,
    k: usize,
    buf: *mut f64,
    len: usize,
) -> TdmpcStatus {
    let Some(handle) = traj.as_ref() else {
        set_error("null trajectory");
        return TdmpcStatus::TdmpcNullArg;
    };
    if buf.is_null() {
        set_error("null buffer");
        return TdmpcStatus::TdmpcNullArg;
    }
    if len != handle.n || k > handle.traj.t() {
        set_error("state index or buffer length out of range");
        return TdmpcStatus::TdmpcInvalid;
    }
    let x = &handle.traj.states[k];
    ptr::copy_nonoverlapping(x.as_slice().as_ptr(), buf, len);
    TdmpcStatus::TdmpcOk
}

/// Copies input u_k (k in 0..T) into `buf` of `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn tdmpc_trajectory_input(
    traj: *const TdmpcTrajectory,
    k: usize,
    buf: *mut f64,
    len: usize,
) -> TdmpcStatus {
    let Some(handle) = traj.as_ref() else {
        set_error("null trajectory");
        return TdmpcStatus::TdmpcNullArg;
    };
    if buf.is_null() {
        set_error("null buffer");
        return TdmpcStatus::TdmpcNullArg;
    }
    if len != handle.m || k >= handle.traj.t() {
        set_error("input index or buffer length out of range");
        return TdmpcStatus::TdmpcInvalid;
    }
    let u = &handle.traj.inputs[k];
    ptr::copy_nonoverlapping(u.as_slice().as_ptr(), buf, len);
    TdmpcStatus::TdmpcOk
}

/// J_T of the run; NaN on a null handle.
#[no_mangle]
pub unsafe extern "C" fn tdmpc_trajectory_total_cost(traj: *const TdmpcTrajectory) -> f64 {
    traj.as_ref().map_or(f64::NAN, |t| t.traj.total_cost())
}

#[no_mangle]
pub unsafe extern "C" fn tdmpc_trajectory_total_flops(traj: *const TdmpcTrajectory) -> u64 {
    traj.as_ref().map_or(0, |t| t.traj.total_flops())
}

/// Run summary as JSON (same content as the CLI's summary.json, without a
/// benchmark comparison); release with `tdmpc_string_free`.
#[no_mangle]
pub unsafe extern "C" fn tdmpc_summary_json(
    scn: *const TdmpcScenario,
    traj: *const TdmpcTrajectory,
    out: *mut *mut c_char,
) -> TdmpcStatus {
    let (Some(s), Some(t)) = (scn.as_ref(), traj.as_ref()) else {
        set_error("null handle");
        return TdmpcStatus::TdmpcNullArg;
    };
    if out.is_null() {
        set_error("null output pointer");
        return TdmpcStatus::TdmpcNullArg;
    }
    guard(|| {
        let summary = summary_report(&SummaryInputs {
            scn: &s.scn,
            traj: &t.traj,
            optimal_cost: None,
            curve: None,
            bounds: &[],
            settle: None,
        });
        match serde_json::to_string_pretty(&summary) {
            Ok(json) => string_out(json, out),
            Err(e) => fail(&Error::from(e)),
        }
    })
}

/// Per-step trajectory table as CSV; release with `tdmpc_string_free`.
#[no_mangle]
pub unsafe extern "C" fn tdmpc_trajectory_csv(
    scn: *const TdmpcScenario,
    traj: *const TdmpcTrajectory,
    out: *mut *mut c_char,
) -> TdmpcStatus {
    let (Some(s), Some(t)) = (scn.as_ref(), traj.as_ref()) else {
        set_error("null handle");
        return TdmpcStatus::TdmpcNullArg;
    };
    if out.is_null() {
        set_error("null output pointer");
        return TdmpcStatus::TdmpcNullArg;
    }
    guard(|| string_out(write_csv(&s.scn, &t.traj, None), out))
}
