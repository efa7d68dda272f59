//! C ABI over the `ictdst` core.
//!
//! Every fallible function returns an [`IctdstStatus`] and writes its result
//! through an out-pointer. On failure the message is kept per thread and can
//! be read with [`ictdst_last_error`]. Strings returned by the library must be
//! released with [`ictdst_string_free`]; handles with their own `_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use ictdst::bank::{build_bank, ExampleBank};
use ictdst::corpus::{load_corpus, load_ontology, normalize_value, Dialogue, Ontology, SlotId};
use ictdst::embedding::{cosine, lexical_embed, LexicalEmbedder, Vector};
use ictdst::evaluation::joint_goal_accuracy;
use ictdst::generation::{gold_states, TurnState};
use ictdst::retriever::{build_query, DenseIndex, QueryMode, Retriever, Strategy};
use ictdst::{Error, ErrorKind};

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IctdstStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 2,
    /// Bad argument or configuration.
    Config = 3,
    /// Malformed or inconsistent data.
    Data = 4,
    /// A model server call failed.
    Remote = 5,
    /// The library panicked. This is a bug.
    Internal = 6,
}

impl From<&Error> for IctdstStatus {
    fn from(e: &Error) -> Self {
        match e.kind() {
            ErrorKind::Config => IctdstStatus::Config,
            ErrorKind::Data => IctdstStatus::Data,
            ErrorKind::Remote => IctdstStatus::Remote,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', "\\0")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(IctdstStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(IctdstStatus::from(&e), e.to_string())
    }
}

type FfiResult<T> = std::result::Result<T, Failure>;

fn guard(f: impl FnOnce() -> FfiResult<()>) -> IctdstStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => IctdstStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(panic) => {
            let msg = panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal error: {msg}"));
            IctdstStatus::Internal
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(IctdstStatus::NullArgument, format!("{what} is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> FfiResult<&'a str> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|e| Failure(IctdstStatus::InvalidUtf8, format!("{what}: {e}")))
}

unsafe fn opt_str_arg<'a>(p: *const c_char, what: &str) -> FfiResult<Option<&'a str>> {
    if p.is_null() {
        Ok(None)
    } else {
        str_arg(p, what).map(Some)
    }
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> FfiResult<&'a mut T> {
    p.as_mut().ok_or_else(|| null(what))
}

fn c_string(s: String) -> FfiResult<*mut c_char> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|_| Failure(IctdstStatus::Data, "result contains a NUL byte".into()))
}

fn json<T: serde::Serialize>(value: &T) -> FfiResult<*mut c_char> {
    let s = serde_json::to_string(value).map_err(|e| Failure(IctdstStatus::Internal, e.to_string()))?;
    c_string(s)
}

/// Message of the last failed call on this thread, or NULL. The pointer is
/// owned by the library and stays valid until the next failure on the same
/// thread.
#[no_mangle]
pub extern "C" fn ictdst_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ictdst_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Release a string returned by this library. NULL is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed already.
#[no_mangle]
pub unsafe extern "C" fn ictdst_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Canonical form of a slot value. `*out` is set to NULL when the value means
/// "not mentioned".
///
/// # Safety
/// `raw` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ictdst_normalize_value(raw: *const c_char, out: *mut *mut c_char) -> IctdstStatus {
    guard(|| {
        let raw = str_arg(raw, "raw")?;
        let out = out_arg(out, "out")?;
        *out = match normalize_value(raw) {
            Some(v) => c_string(v)?,
            None => ptr::null_mut(),
        };
        Ok(())
    })
}

/// Write the `dim`-dimensional lexical embedding of `text` into `out`.
///
/// # Safety
/// `out` must point to `dim` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn ictdst_lexical_embed(text: *const c_char, dim: usize, out: *mut f64) -> IctdstStatus {
    guard(|| {
        let text = str_arg(text, "text")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let v = lexical_embed(text, dim)?;
        ptr::copy_nonoverlapping(v.values().as_ptr(), out, dim);
        Ok(())
    })
}

/// Cosine similarity of two `len`-dimensional vectors.
///
/// # Safety
/// `a` and `b` must each point to `len` readable doubles.
#[no_mangle]
pub unsafe extern "C" fn ictdst_cosine(a: *const f64, b: *const f64, len: usize, out: *mut f64) -> IctdstStatus {
    guard(|| {
        if a.is_null() || b.is_null() {
            return Err(null("vector"));
        }
        let out = out_arg(out, "out")?;
        let va = Vector::new(std::slice::from_raw_parts(a, len).to_vec())?;
        let vb = Vector::new(std::slice::from_raw_parts(b, len).to_vec())?;
        *out = cosine(&va, &vb)?;
        Ok(())
    })
}

/// A loaded corpus with its ontology.
pub struct IctdstDataset {
    ontology: Ontology,
    dialogues: Vec<Dialogue>,
}

/// Load and validate a corpus against an ontology.
///
/// # Safety
/// Paths must be NUL-terminated strings; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ictdst_dataset_load(
    corpus_path: *const c_char,
    ontology_path: *const c_char,
    out: *mut *mut IctdstDataset,
) -> IctdstStatus {
    guard(|| {
        let corpus = str_arg(corpus_path, "corpus_path")?;
        let ontology = str_arg(ontology_path, "ontology_path")?;
        let out = out_arg(out, "out")?;
        let ontology = load_ontology(Path::new(ontology))?;
        let dialogues = load_corpus(Path::new(corpus), &ontology)?;
        *out = Box::into_raw(Box::new(IctdstDataset { ontology, dialogues }));
        Ok(())
    })
}

/// Number of dialogues, or 0 for NULL.
///
/// # Safety
/// `dataset` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ictdst_dataset_len(dataset: *const IctdstDataset) -> usize {
    dataset.as_ref().map_or(0, |d| d.dialogues.len())
}

/// Number of slots in the dataset's ontology, or 0 for NULL.
///
/// # Safety
/// `dataset` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ictdst_dataset_slot_count(dataset: *const IctdstDataset) -> usize {
    dataset.as_ref().map_or(0, |d| d.ontology.len())
}

/// # Safety
/// `dataset` must be NULL or a handle not yet freed. Retrievers built from it
/// stay valid.
#[no_mangle]
pub unsafe extern "C" fn ictdst_dataset_free(dataset: *mut IctdstDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

/// A retriever over the example bank of a dataset. Owns its bank.
pub struct IctdstRetriever {
    // Borrows from the two boxes below, so it is declared (and dropped) first.
    retriever: Retriever<'static>,
    _bank: Box<ExampleBank>,
    _provider: Box<LexicalEmbedder>,
}

/// Build a retriever over every dialogue of `dataset`. `strategy` is "dense",
/// "bm25" or "random"; `embed_dim` is used by dense retrieval and `seed` by
/// random retrieval.
///
/// # Safety
/// `dataset` must be a live handle, `strategy` a NUL-terminated string and
/// `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ictdst_retriever_new(
    dataset: *const IctdstDataset,
    strategy: *const c_char,
    embed_dim: usize,
    seed: u64,
    out: *mut *mut IctdstRetriever,
) -> IctdstStatus {
    guard(|| {
        let dataset = dataset.as_ref().ok_or_else(|| null("dataset"))?;
        let strategy: Strategy = str_arg(strategy, "strategy")?.parse()?;
        let out = out_arg(out, "out")?;
        let bank = Box::new(build_bank(&dataset.dialogues)?);
        let provider = Box::new(LexicalEmbedder::new(embed_dim)?);
        // SAFETY: both boxes live in the handle next to the retriever and are
        // dropped after it; their heap addresses never move.
        let bank_ref: &'static ExampleBank = &*(bank.as_ref() as *const ExampleBank);
        let provider_ref: &'static LexicalEmbedder = &*(provider.as_ref() as *const LexicalEmbedder);
        let retriever = match strategy {
            Strategy::Dense => Retriever::dense(bank_ref, DenseIndex::build(bank_ref, provider_ref)?, provider_ref)?,
            Strategy::Bm25 => Retriever::bm25(bank_ref),
            Strategy::Random => Retriever::random(bank_ref, seed),
        };
        *out = Box::into_raw(Box::new(IctdstRetriever {
            retriever,
            _bank: bank,
            _provider: provider,
        }));
        Ok(())
    })
}

/// Number of examples in the retriever's bank, or 0 for NULL.
///
/// # Safety
/// `retriever` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ictdst_retriever_bank_len(retriever: *const IctdstRetriever) -> usize {
    retriever.as_ref().map_or(0, |r| r.retriever.bank().len())
}

/// # Safety
/// `retriever` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ictdst_retriever_free(retriever: *mut IctdstRetriever) {
    if !retriever.is_null() {
        drop(Box::from_raw(retriever));
    }
}

/// Retrieve `k` examples for slot `slot` at turn `turn` of dialogue
/// `dialogue_id` in `dataset`. `query_mode` is "whole" or "single";
/// `exclude_domain` may be NULL. Examples from the queried turn itself are
/// never returned. `*out_json` receives `{"items":[{"id":..,"score":..}],"k":..}`.
///
/// # Safety
/// Handles must be live, strings NUL-terminated (or NULL where allowed) and
/// `out_json` a valid pointer.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn ictdst_retrieve(
    retriever: *const IctdstRetriever,
    dataset: *const IctdstDataset,
    dialogue_id: *const c_char,
    turn: usize,
    slot: *const c_char,
    query_mode: *const c_char,
    k: usize,
    exclude_domain: *const c_char,
    out_json: *mut *mut c_char,
) -> IctdstStatus {
    guard(|| {
        let retriever = retriever.as_ref().ok_or_else(|| null("retriever"))?;
        let dataset = dataset.as_ref().ok_or_else(|| null("dataset"))?;
        let id = str_arg(dialogue_id, "dialogue_id")?;
        let slot: SlotId = str_arg(slot, "slot")?.parse()?;
        let mode: QueryMode = str_arg(query_mode, "query_mode")?.parse()?;
        let exclude = opt_str_arg(exclude_domain, "exclude_domain")?;
        let out = out_arg(out_json, "out_json")?;
        let dialogue = dataset
            .dialogues
            .iter()
            .find(|d| d.id() == id)
            .ok_or_else(|| Failure(IctdstStatus::Data, format!("no dialogue {id:?}")))?;
        let mut query = build_query(dialogue, turn, &slot, mode)?.excluding_source(id, turn);
        if let Some(d) = exclude {
            query = query.excluding_domain(d);
        }
        *out = json(&retriever.retriever.retrieve(&query, k)?)?;
        Ok(())
    })
}

/// Joint goal accuracy of `predictions_json` (a JSON array of
/// `{"dialogue_id","turn","state"}`) against the gold states of `dataset`.
/// `slot_scope` restricts scoring to one domain and may be NULL. `*out_json`
/// receives the evaluation report.
///
/// # Safety
/// `dataset` must be live, strings NUL-terminated (or NULL where allowed) and
/// `out_json` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ictdst_jga(
    dataset: *const IctdstDataset,
    predictions_json: *const c_char,
    slot_scope: *const c_char,
    out_json: *mut *mut c_char,
) -> IctdstStatus {
    guard(|| {
        let dataset = dataset.as_ref().ok_or_else(|| null("dataset"))?;
        let preds = str_arg(predictions_json, "predictions_json")?;
        let scope = opt_str_arg(slot_scope, "slot_scope")?;
        let out = out_arg(out_json, "out_json")?;
        let preds: Vec<TurnState> =
            serde_json::from_str(preds).map_err(|e| Failure(IctdstStatus::Data, format!("predictions: {e}")))?;
        let report = joint_goal_accuracy(&preds, &gold_states(&dataset.dialogues), scope)?;
        *out = json(&report)?;
        Ok(())
    })
}
