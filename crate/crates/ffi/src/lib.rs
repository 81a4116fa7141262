//! C ABI over philokit.
//!
//! Every fallible call returns a [`PkStatus`]; on failure the message is
//! available from [`pk_last_error`] on the same thread. Objects are opaque
//! handles released with their `_free` function. Strings handed out by the
//! library are released with [`pk_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use philokit::conllu::{parse_conllu, serialize_conllu, Treebank};
use philokit::parser::{chu_liu_edmonds, ParserModel, WeightedDigraph};
use philokit::tagging::TaggerModel;
use philokit::{forge, metrics, Error};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PkStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Parse = 3,
    InvalidTree = 4,
    Mismatch = 5,
    Shape = 6,
    InvalidInput = 7,
    Io = 8,
    Model = 9,
    Panic = 10,
}

impl From<&Error> for PkStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Parse { .. } | Error::DuplicateId { .. } => PkStatus::Parse,
            Error::InvalidTree { .. } | Error::NoArborescence(_) => PkStatus::InvalidTree,
            Error::Mismatch { .. } => PkStatus::Mismatch,
            Error::Shape(_) => PkStatus::Shape,
            Error::InvalidInput(_) | Error::Empty(_) | Error::Config(_) => PkStatus::InvalidInput,
            Error::Io { .. } => PkStatus::Io,
            Error::UnseenLabel { .. } | Error::Json(_) => PkStatus::Model,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior NUL");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(PkStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(PkStatus::from(&e), e.to_string())
    }
}

fn guard(body: impl FnOnce() -> Result<(), Failure>) -> PkStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            PkStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            PkStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(PkStatus::NullPointer, format!("{what} is NULL"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|e| Failure(PkStatus::InvalidUtf8, format!("{what}: {e}")))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

fn into_c_string(s: String) -> Result<*mut c_char, Failure> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|_| Failure(PkStatus::InvalidInput, "output contains a NUL byte".into()))
}

/// Message of the last failed call on this thread, or NULL. Valid until the next call.
#[no_mangle]
pub extern "C" fn pk_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Releases a string returned by this library. NULL is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn pk_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// A parsed CoNLL-U treebank.
pub struct PkTreebank(Treebank);

/// Parses NUL-terminated CoNLL-U text.
///
/// # Safety
/// `text` must be a valid C string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pk_treebank_parse(text: *const c_char, out: *mut *mut PkTreebank) -> PkStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let tb = parse_conllu(&forge::normalize(str_arg(text, "text")?))?;
        *out = Box::into_raw(Box::new(PkTreebank(tb)));
        Ok(())
    })
}

/// Reads a CoNLL-U file.
///
/// # Safety
/// `path` must be a valid C string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pk_treebank_read(path: *const c_char, out: *mut *mut PkTreebank) -> PkStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let tb = Treebank::read(str_arg(path, "path")?)?;
        *out = Box::into_raw(Box::new(PkTreebank(tb)));
        Ok(())
    })
}

/// # Safety
/// `tb` must come from this library and not have been freed. NULL is ignored.
#[no_mangle]
pub unsafe extern "C" fn pk_treebank_free(tb: *mut PkTreebank) {
    if !tb.is_null() {
        drop(Box::from_raw(tb));
    }
}

/// # Safety
/// `tb` must be a live handle or NULL (which yields 0).
#[no_mangle]
pub unsafe extern "C" fn pk_treebank_sentence_count(tb: *const PkTreebank) -> usize {
    tb.as_ref().map_or(0, |t| t.0.sentences.len())
}

/// # Safety
/// `tb` must be a live handle or NULL (which yields 0).
#[no_mangle]
pub unsafe extern "C" fn pk_treebank_token_count(tb: *const PkTreebank) -> usize {
    tb.as_ref().map_or(0, |t| t.0.token_count())
}

/// CoNLL-U text of the treebank; free it with `pk_string_free`.
///
/// # Safety
/// `tb` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pk_treebank_serialize(tb: *const PkTreebank, out: *mut *mut c_char) -> PkStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = into_c_string(serialize_conllu(&handle(tb, "tb")?.0))?;
        Ok(())
    })
}

/// Scores in percent; token_count is the number of scored words.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PkEvalReport {
    pub upos: f64,
    pub xpos: f64,
    pub uas: f64,
    pub las: f64,
    pub lemmas: f64,
    pub token_count: usize,
}

/// Scores `pred` against `gold`; both must have the same tokens.
///
/// # Safety
/// Both handles must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pk_evaluate(
    gold: *const PkTreebank,
    pred: *const PkTreebank,
    out: *mut PkEvalReport,
) -> PkStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let r = metrics::evaluate(&handle(gold, "gold")?.0, &handle(pred, "pred")?.0)?;
        *out = PkEvalReport {
            upos: r.upos_acc,
            xpos: r.xpos_acc,
            uas: r.uas,
            las: r.las,
            lemmas: r.lemma_acc,
            token_count: r.token_count,
        };
        Ok(())
    })
}

/// Maximum spanning arborescence of an `(n+1) x (n+1)` row-major score matrix
/// (`scores[h * size + d]` scores head h for dependent d; node 0 is ROOT).
/// Writes the head of tokens 1..=n into `heads_out[0..n]`.
///
/// # Safety
/// `scores` must hold `size * size` values and `heads_out` room for `size - 1`.
#[no_mangle]
pub unsafe extern "C" fn pk_max_arborescence(scores: *const f64, size: usize, heads_out: *mut usize) -> PkStatus {
    guard(|| {
        if scores.is_null() {
            return Err(null("scores"));
        }
        if heads_out.is_null() {
            return Err(null("heads_out"));
        }
        let cells = size
            .checked_mul(size)
            .ok_or_else(|| Failure(PkStatus::Shape, "size overflows".into()))?;
        let values = std::slice::from_raw_parts(scores, cells).to_vec();
        let m = ndarray::Array2::from_shape_vec((size, size), values)
            .map_err(|e| Failure(PkStatus::Shape, e.to_string()))?;
        let heads = chu_liu_edmonds(&WeightedDigraph::new(m)?)?;
        std::slice::from_raw_parts_mut(heads_out, heads.len()).copy_from_slice(&heads);
        Ok(())
    })
}

/// Word count of a byte buffer with `wc -w` semantics; invalid UTF-8 is non-printing.
///
/// # Safety
/// `bytes` must hold `len` bytes (it may be NULL when `len` is 0).
#[no_mangle]
pub unsafe extern "C" fn pk_count_tokens(bytes: *const u8, len: usize) -> usize {
    if bytes.is_null() || len == 0 {
        return 0;
    }
    forge::count_tokens_bytes(std::slice::from_raw_parts(bytes, len))
}

/// NFC form of `text`; free it with `pk_string_free`.
///
/// # Safety
/// `text` must be a valid C string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pk_normalize(text: *const c_char, out: *mut *mut c_char) -> PkStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = into_c_string(forge::normalize(str_arg(text, "text")?))?;
        Ok(())
    })
}

/// Stopword test with the default curation settings: 1 if Greek, 0 if not, -1 on bad input.
///
/// # Safety
/// `text` must be a valid C string.
#[no_mangle]
pub unsafe extern "C" fn pk_detect_greek(text: *const c_char) -> i32 {
    match str_arg(text, "text") {
        Ok(t) => i32::from(forge::detect_greek(
            &forge::normalize(t),
            &forge::FilterConfig::default(),
        )),
        Err(Failure(_, msg)) => {
            set_error(msg);
            -1
        }
    }
}

/// A trained tagger.
pub struct PkTagger(TaggerModel);

/// # Safety
/// `path` must be a valid C string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pk_tagger_load(path: *const c_char, out: *mut *mut PkTagger) -> PkStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let m = TaggerModel::load(str_arg(path, "path")?)?;
        *out = Box::into_raw(Box::new(PkTagger(m)));
        Ok(())
    })
}

/// Fills the tagger's column in every sentence of `tb`.
///
/// # Safety
/// Both handles must be live.
#[no_mangle]
pub unsafe extern "C" fn pk_tagger_apply(tagger: *const PkTagger, tb: *mut PkTreebank) -> PkStatus {
    guard(|| {
        let m = &handle(tagger, "tagger")?.0;
        let tb = tb.as_mut().ok_or_else(|| null("tb"))?;
        for s in tb.0.sentences.iter_mut().filter(|s| !s.is_empty()) {
            m.tag_sentence(s)?;
        }
        Ok(())
    })
}

/// # Safety
/// `tagger` must come from this library and not have been freed. NULL is ignored.
#[no_mangle]
pub unsafe extern "C" fn pk_tagger_free(tagger: *mut PkTagger) {
    if !tagger.is_null() {
        drop(Box::from_raw(tagger));
    }
}

/// A trained parser.
pub struct PkParser(ParserModel);

/// # Safety
/// `path` must be a valid C string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pk_parser_load(path: *const c_char, out: *mut *mut PkParser) -> PkStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let m = ParserModel::load(str_arg(path, "path")?)?;
        *out = Box::into_raw(Box::new(PkParser(m)));
        Ok(())
    })
}

/// Writes HEAD and DEPREL for every sentence of `tb`.
///
/// # Safety
/// Both handles must be live.
#[no_mangle]
pub unsafe extern "C" fn pk_parser_apply(parser: *const PkParser, tb: *mut PkTreebank) -> PkStatus {
    guard(|| {
        let m = &handle(parser, "parser")?.0;
        let tb = tb.as_mut().ok_or_else(|| null("tb"))?;
        m.parse_treebank(&mut tb.0)?;
        Ok(())
    })
}

/// # Safety
/// `parser` must come from this library and not have been freed. NULL is ignored.
#[no_mangle]
pub unsafe extern "C" fn pk_parser_free(parser: *mut PkParser) {
    if !parser.is_null() {
        drop(Box::from_raw(parser));
    }
}
