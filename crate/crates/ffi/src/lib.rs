//! C ABI for the eventstream engine.
//!
//! Objects cross the boundary as opaque handles created by `es_*_new`
//! functions and released by the matching `es_*_free`. Every fallible call
//! returns an [`EsStatus`]; on failure, [`es_last_error`] describes the most
//! recent error on the calling thread. Strings returned by the library are
//! owned by the caller and must be released with [`es_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::slice;

use eventstream::config::PipelineConfig;
use eventstream::entropy::{self, EncodingTree, MergeConstraint, WeightedGraph};
use eventstream::metrics;
use eventstream::model::{ingest_dataset, DatasetFormat};
use eventstream::pipeline::{self, DetectOptions, PipelineError, ProviderSpec};

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    InvalidUtf8 = 3,
    Io = 4,
    Parse = 5,
    Provider = 6,
    /// A stage ran but reported failure (for example too many quarantined anchors).
    Failed = 7,
    /// An unexpected internal error; the handle involved should be discarded.
    Internal = 8,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: impl Into<String>) {
    let text = message.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).ok());
}

fn fail(status: EsStatus, message: impl Into<String>) -> EsStatus {
    set_error(message);
    status
}

fn guard(f: impl FnOnce() -> EsStatus) -> EsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(_) => fail(EsStatus::Internal, "internal panic"),
    }
}

fn pipeline_status(e: &PipelineError) -> EsStatus {
    match e {
        PipelineError::Io { .. } => EsStatus::Io,
        PipelineError::Dataset(_)
        | PipelineError::Json { .. }
        | PipelineError::Malformed { .. } => EsStatus::Parse,
        PipelineError::Config(_) => EsStatus::InvalidArgument,
        PipelineError::Provider(_) | PipelineError::Llm(_) => EsStatus::Provider,
        PipelineError::BlockFailed { .. } => EsStatus::Failed,
        _ => EsStatus::Internal,
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, EsStatus> {
    if p.is_null() {
        return Err(fail(EsStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(EsStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

/// Message of the last error on this thread, or null. Valid until the next
/// failing call on the same thread.
#[no_mangle]
pub extern "C" fn es_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Release a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn es_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

fn out_string(s: String, out: *mut *mut c_char) -> EsStatus {
    match CString::new(s) {
        Ok(c) => {
            // SAFETY: callers check `out` for null before producing output.
            unsafe { *out = c.into_raw() };
            EsStatus::Ok
        }
        Err(_) => fail(EsStatus::Internal, "output contained a NUL byte"),
    }
}

/// Pipeline configuration handle.
pub struct EsConfig {
    inner: PipelineConfig,
}

/// Default configuration.
#[no_mangle]
pub extern "C" fn es_config_new() -> *mut EsConfig {
    Box::into_raw(Box::new(EsConfig {
        inner: PipelineConfig::default(),
    }))
}

/// Parse a TOML configuration; unknown keys and out-of-range values fail.
///
/// # Safety
/// `toml` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn es_config_from_toml(
    toml: *const c_char,
    out: *mut *mut EsConfig,
) -> EsStatus {
    guard(|| {
        if out.is_null() {
            return fail(EsStatus::NullPointer, "out is null");
        }
        let text = match str_arg(toml, "toml") {
            Ok(t) => t,
            Err(s) => return s,
        };
        match PipelineConfig::from_toml_str(text) {
            Ok(inner) => {
                *out = Box::into_raw(Box::new(EsConfig { inner }));
                EsStatus::Ok
            }
            Err(e) => fail(EsStatus::InvalidArgument, e.to_string()),
        }
    })
}

/// Resolved configuration as TOML.
///
/// # Safety
/// `config` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn es_config_to_toml(
    config: *const EsConfig,
    out: *mut *mut c_char,
) -> EsStatus {
    guard(|| {
        if config.is_null() || out.is_null() {
            return fail(EsStatus::NullPointer, "config or out is null");
        }
        out_string((*config).inner.to_toml(), out)
    })
}

/// # Safety
/// `config` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn es_config_free(config: *mut EsConfig) {
    if !config.is_null() {
        drop(Box::from_raw(config));
    }
}

/// Weighted undirected graph handle with an optional no-merge constraint.
pub struct EsGraph {
    graph: WeightedGraph,
    constraint: MergeConstraint,
}

/// Graph with `nodes` nodes and no edges.
#[no_mangle]
pub extern "C" fn es_graph_new(nodes: usize) -> *mut EsGraph {
    Box::into_raw(Box::new(EsGraph {
        graph: WeightedGraph::new(nodes),
        constraint: MergeConstraint::new(),
    }))
}

/// Add `w` to the weight of edge `{u, v}`. Self-loops and non-positive
/// weights are rejected.
///
/// # Safety
/// `graph` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn es_graph_add_edge(
    graph: *mut EsGraph,
    u: usize,
    v: usize,
    w: f64,
) -> EsStatus {
    guard(|| {
        let Some(g) = graph.as_mut() else {
            return fail(EsStatus::NullPointer, "graph is null");
        };
        match g.graph.add_edge(u, v, w) {
            Ok(()) => EsStatus::Ok,
            Err(e) => fail(EsStatus::InvalidArgument, e.to_string()),
        }
    })
}

/// Forbid nodes `u` and `v` from sharing a community in `es_graph_minimize`.
///
/// # Safety
/// `graph` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn es_graph_forbid(graph: *mut EsGraph, u: usize, v: usize) -> EsStatus {
    guard(|| {
        let Some(g) = graph.as_mut() else {
            return fail(EsStatus::NullPointer, "graph is null");
        };
        let n = g.graph.node_count();
        if u >= n || v >= n {
            return fail(EsStatus::InvalidArgument, "node out of range");
        }
        g.constraint.forbid(u, v);
        EsStatus::Ok
    })
}

unsafe fn assignment_tree(assignment: *const usize, n: usize) -> Result<EncodingTree, EsStatus> {
    if assignment.is_null() && n > 0 {
        return Err(fail(EsStatus::NullPointer, "assignment is null"));
    }
    let labels = if n == 0 {
        &[][..]
    } else {
        slice::from_raw_parts(assignment, n)
    };
    let mut groups: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for (v, &c) in labels.iter().enumerate() {
        groups.entry(c).or_default().push(v);
    }
    Ok(EncodingTree::new(groups.into_values().collect()))
}

/// Structural entropy of the graph under the partition that gives node `i`
/// the community label `assignment[i]`. `len` must equal the node count.
///
/// # Safety
/// `graph` must be live; `assignment` must hold `len` values; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn es_graph_entropy(
    graph: *const EsGraph,
    assignment: *const usize,
    len: usize,
    out: *mut f64,
) -> EsStatus {
    guard(|| {
        let (Some(g), false) = (graph.as_ref(), out.is_null()) else {
            return fail(EsStatus::NullPointer, "graph or out is null");
        };
        if len != g.graph.node_count() {
            return fail(
                EsStatus::InvalidArgument,
                "assignment length differs from node count",
            );
        }
        let tree = match assignment_tree(assignment, len) {
            Ok(t) => t,
            Err(s) => return s,
        };
        match entropy::structural_entropy(&g.graph, &tree) {
            Ok(h) => {
                *out = h;
                EsStatus::Ok
            }
            Err(e) => fail(EsStatus::InvalidArgument, e.to_string()),
        }
    })
}

/// Greedy minimization under the recorded constraints. Writes one community
/// index per node into `assignment` (length `len`, the node count) and the
/// number of communities into `communities` when it is non-null.
///
/// # Safety
/// `graph` must be live; `assignment` must hold `len` writable values.
#[no_mangle]
pub unsafe extern "C" fn es_graph_minimize(
    graph: *const EsGraph,
    assignment: *mut usize,
    len: usize,
    communities: *mut usize,
) -> EsStatus {
    guard(|| {
        let Some(g) = graph.as_ref() else {
            return fail(EsStatus::NullPointer, "graph is null");
        };
        let n = g.graph.node_count();
        if len != n {
            return fail(
                EsStatus::InvalidArgument,
                "assignment length differs from node count",
            );
        }
        if assignment.is_null() && n > 0 {
            return fail(EsStatus::NullPointer, "assignment is null");
        }
        let tree = entropy::minimize(&g.graph, &g.constraint);
        if n > 0 {
            slice::from_raw_parts_mut(assignment, n).copy_from_slice(&tree.assignment(n));
        }
        if !communities.is_null() {
            *communities = tree.len();
        }
        EsStatus::Ok
    })
}

/// # Safety
/// `graph` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn es_graph_free(graph: *mut EsGraph) {
    if !graph.is_null() {
        drop(Box::from_raw(graph));
    }
}

/// Which agreement score `es_agreement` computes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EsAgreement {
    Nmi = 0,
    Ami = 1,
    Ari = 2,
}

/// Agreement between two labelings of `len` items.
///
/// # Safety
/// `pred` and `gold` must each hold `len` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn es_agreement(
    kind: EsAgreement,
    pred: *const i64,
    gold: *const i64,
    len: usize,
    out: *mut f64,
) -> EsStatus {
    guard(|| {
        if pred.is_null() || gold.is_null() || out.is_null() {
            return fail(EsStatus::NullPointer, "pred, gold or out is null");
        }
        let (p, g) = (
            slice::from_raw_parts(pred, len),
            slice::from_raw_parts(gold, len),
        );
        let r = match kind {
            EsAgreement::Nmi => metrics::nmi(p, g),
            EsAgreement::Ami => metrics::ami(p, g),
            EsAgreement::Ari => metrics::ari(p, g),
        };
        match r {
            Ok(x) => {
                *out = x;
                EsStatus::Ok
            }
            Err(e) => fail(EsStatus::InvalidArgument, e.to_string()),
        }
    })
}

/// Run sampling and detection over a dataset file, writing artifacts under
/// `out_dir/detect`. `provider` is `openai` or `mock-oracle:<seed>[:<noise>]`;
/// `config` may be null for defaults. On success the JSON detection summary
/// is stored in `summary` when it is non-null.
///
/// # Safety
/// String arguments must be NUL-terminated; handles must be live.
#[no_mangle]
pub unsafe extern "C" fn es_run_detect(
    dataset: *const c_char,
    out_dir: *const c_char,
    provider: *const c_char,
    config: *const EsConfig,
    summary: *mut *mut c_char,
) -> EsStatus {
    guard(|| {
        let args = (
            str_arg(dataset, "dataset"),
            str_arg(out_dir, "out_dir"),
            str_arg(provider, "provider"),
        );
        let (dataset, out_dir, provider) = match args {
            (Ok(a), Ok(b), Ok(c)) => (a, b, c),
            (Err(s), _, _) | (_, Err(s), _) | (_, _, Err(s)) => return s,
        };
        let config = config
            .as_ref()
            .map_or_else(PipelineConfig::default, |c| c.inner.clone());
        let run = || -> Result<String, PipelineError> {
            let spec: ProviderSpec = provider.parse()?;
            let path = Path::new(dataset);
            let blocks = ingest_dataset(path, DatasetFormat::from_path(path))?;
            let embedder = pipeline::build_embedder(&config)?;
            let chat = pipeline::build_chat(&spec, &config, &blocks)?;
            let s = pipeline::run_detect(
                &blocks,
                &config,
                embedder.as_ref(),
                chat.as_ref(),
                &spec,
                Path::new(out_dir),
                &DetectOptions::default(),
            )?;
            Ok(serde_json::to_string(&s).expect("summary serializes"))
        };
        match run() {
            Ok(json) if !summary.is_null() => out_string(json, summary),
            Ok(_) => EsStatus::Ok,
            Err(e) => fail(pipeline_status(&e), e.to_string()),
        }
    })
}
