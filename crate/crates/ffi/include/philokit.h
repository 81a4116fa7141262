/* Generated by cbindgen from src/lib.rs. Do not edit. */

#ifndef PHILOKIT_H
#define PHILOKIT_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum PkStatus {
  PK_STATUS_OK = 0,
  PK_STATUS_NULL_POINTER = 1,
  PK_STATUS_INVALID_UTF8 = 2,
  PK_STATUS_PARSE = 3,
  PK_STATUS_INVALID_TREE = 4,
  PK_STATUS_MISMATCH = 5,
  PK_STATUS_SHAPE = 6,
  PK_STATUS_INVALID_INPUT = 7,
  PK_STATUS_IO = 8,
  PK_STATUS_MODEL = 9,
  PK_STATUS_PANIC = 10,
} PkStatus;

// A trained parser.
typedef struct PkParser PkParser;

// A trained tagger.
typedef struct PkTagger PkTagger;

// A parsed CoNLL-U treebank.
typedef struct PkTreebank PkTreebank;

// Scores in percent; token_count is the number of scored words.
typedef struct PkEvalReport {
  double upos;
  double xpos;
  double uas;
  double las;
  double lemmas;
  size_t token_count;
} PkEvalReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or NULL. Valid until the next call.
const char *pk_last_error(void);

// Releases a string returned by this library. NULL is ignored.
//
// # Safety
// `s` must come from this library and not have been freed.
void pk_string_free(char *s);

// Parses NUL-terminated CoNLL-U text.
//
// # Safety
// `text` must be a valid C string; `out` must be writable.
enum PkStatus pk_treebank_parse(const char *text, struct PkTreebank **out);

// Reads a CoNLL-U file.
//
// # Safety
// `path` must be a valid C string; `out` must be writable.
enum PkStatus pk_treebank_read(const char *path, struct PkTreebank **out);

// # Safety
// `tb` must come from this library and not have been freed. NULL is ignored.
void pk_treebank_free(struct PkTreebank *tb);

// # Safety
// `tb` must be a live handle or NULL (which yields 0).
size_t pk_treebank_sentence_count(const struct PkTreebank *tb);

// # Safety
// `tb` must be a live handle or NULL (which yields 0).
size_t pk_treebank_token_count(const struct PkTreebank *tb);

// CoNLL-U text of the treebank; free it with `pk_string_free`.
//
// # Safety
// `tb` must be a live handle; `out` must be writable.
enum PkStatus pk_treebank_serialize(const struct PkTreebank *tb, char **out);

// Scores `pred` against `gold`; both must have the same tokens.
//
// # Safety
// Both handles must be live; `out` must be writable.
enum PkStatus pk_evaluate(const struct PkTreebank *gold,
                          const struct PkTreebank *pred,
                          struct PkEvalReport *out);

// Maximum spanning arborescence of an `(n+1) x (n+1)` row-major score matrix
// (`scores[h * size + d]` scores head h for dependent d; node 0 is ROOT).
// Writes the head of tokens 1..=n into `heads_out[0..n]`.
//
// # Safety
// `scores` must hold `size * size` values and `heads_out` room for `size - 1`.
enum PkStatus pk_max_arborescence(const double *scores, size_t size, size_t *heads_out);

// Word count of a byte buffer with `wc -w` semantics; invalid UTF-8 is non-printing.
//
// # Safety
// `bytes` must hold `len` bytes (it may be NULL when `len` is 0).
size_t pk_count_tokens(const uint8_t *bytes, size_t len);

// NFC form of `text`; free it with `pk_string_free`.
//
// # Safety
// `text` must be a valid C string; `out` must be writable.
enum PkStatus pk_normalize(const char *text, char **out);

// Stopword test with the default curation settings: 1 if Greek, 0 if not, -1 on bad input.
//
// # Safety
// `text` must be a valid C string.
int32_t pk_detect_greek(const char *text);

// # Safety
// `path` must be a valid C string; `out` must be writable.
enum PkStatus pk_tagger_load(const char *path, struct PkTagger **out);

// Fills the tagger's column in every sentence of `tb`.
//
// # Safety
// Both handles must be live.
enum PkStatus pk_tagger_apply(const struct PkTagger *tagger, struct PkTreebank *tb);

// # Safety
// `tagger` must come from this library and not have been freed. NULL is ignored.
void pk_tagger_free(struct PkTagger *tagger);

// # Safety
// `path` must be a valid C string; `out` must be writable.
enum PkStatus pk_parser_load(const char *path, struct PkParser **out);

// Writes HEAD and DEPREL for every sentence of `tb`.
//
// # Safety
// Both handles must be live.
enum PkStatus pk_parser_apply(const struct PkParser *parser, struct PkTreebank *tb);

// # Safety
// `parser` must come from this library and not have been freed. NULL is ignored.
void pk_parser_free(struct PkParser *parser);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PHILOKIT_H */
