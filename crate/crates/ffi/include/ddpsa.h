#ifndef DDPSA_H
#define DDPSA_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stddef.h>
#include <stdint.h>

typedef enum DdpsaStatus {
  DDPSA_STATUS_OK = 0,
  DDPSA_STATUS_NULL_POINTER = 1,
  DDPSA_STATUS_INVALID_PARAMETER = 2,
  DDPSA_STATUS_ENCODING_OVERFLOW = 3,
  DDPSA_STATUS_INCOMPLETE_SHARESET = 4,
  DDPSA_STATUS_PROTOCOL = 5,
  DDPSA_STATUS_FRAME = 6,
  DDPSA_STATUS_BUFFER_TOO_SMALL = 7,
  DDPSA_STATUS_PANIC = 8,
  DDPSA_STATUS_OTHER = 9,
} DdpsaStatus;

/*
 Fixed-point codec bound to a prime modulus.
 */
typedef struct DdpsaCodec DdpsaCodec;

/*
 One decoded protocol message.
 */
typedef struct DdpsaMessage DdpsaMessage;

/*
 Seeded ChaCha20 stream used for share masks and noise.
 */
typedef struct DdpsaRng DdpsaRng;

/*
 A field element as two 64-bit halves of its canonical value.
 */
typedef struct DdpsaElement {
  uint64_t hi;
  uint64_t lo;
} DdpsaElement;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Length of the last error message on this thread, excluding the NUL.
 */
size_t ddpsa_last_error_length(void);

/*
 Copies the last error message on this thread into `buf` as a
 NUL-terminated string, truncating to `cap - 1` bytes. Returns the number
 of bytes written, excluding the NUL.

 # Safety
 `buf` must be valid for `cap` bytes or null.
 */
size_t ddpsa_last_error_message(char *buf, size_t cap);

/*
 Library version as a static NUL-terminated string.
 */
const char *ddpsa_version(void);

/*
 Codec with `decimal_places` digits over the default prime 2^127 - 1.

 # Safety
 `out` must be valid for writing a pointer.
 */
enum DdpsaStatus ddpsa_codec_new(uint32_t decimal_places, struct DdpsaCodec **out);

/*
 Codec over a caller-chosen prime `hi * 2^64 + lo`.

 # Safety
 `out` must be valid for writing a pointer.
 */
enum DdpsaStatus ddpsa_codec_new_with_modulus(struct DdpsaElement modulus,
                                              uint32_t decimal_places,
                                              struct DdpsaCodec **out);

/*
 # Safety
 `codec` must come from `ddpsa_codec_new*` and not be used afterwards.
 */
void ddpsa_codec_free(struct DdpsaCodec *codec);

/*
 The codec's modulus.

 # Safety
 `codec` and `out` must be valid.
 */
enum DdpsaStatus ddpsa_codec_modulus(const struct DdpsaCodec *codec, struct DdpsaElement *out);

/*
 Encodes `n` reals into field elements.

 # Safety
 `xs` and `out` must be valid for `n` items.
 */
enum DdpsaStatus ddpsa_encode(const struct DdpsaCodec *codec,
                              const double *xs,
                              size_t n,
                              struct DdpsaElement *out);

/*
 Decodes `n` field elements with the centered lift.

 # Safety
 `es` and `out` must be valid for `n` items.
 */
enum DdpsaStatus ddpsa_decode(const struct DdpsaCodec *codec,
                              const struct DdpsaElement *es,
                              size_t n,
                              double *out);

/*
 # Safety
 `out` must be valid for writing a pointer.
 */
enum DdpsaStatus ddpsa_rng_new(uint64_t seed, struct DdpsaRng **out);

/*
 # Safety
 `rng` must come from `ddpsa_rng_new` and not be used afterwards.
 */
void ddpsa_rng_free(struct DdpsaRng *rng);

/*
 Splits a `dim`-vector into `m` additive shares. `out` receives `m * dim`
 elements, share `j` at `out[j * dim ..]`.

 # Safety
 `secret` must hold `dim` elements, `out` room for `m * dim`.
 */
enum DdpsaStatus ddpsa_split(const struct DdpsaCodec *codec,
                             struct DdpsaRng *rng,
                             const struct DdpsaElement *secret,
                             size_t dim,
                             size_t m,
                             struct DdpsaElement *out);

/*
 Sums `m` shares laid out as by `ddpsa_split` into the secret.

 # Safety
 `shares` must hold `m * dim` elements, `out` room for `dim`.
 */
enum DdpsaStatus ddpsa_reconstruct(const struct DdpsaCodec *codec,
                                   const struct DdpsaElement *shares,
                                   size_t m,
                                   size_t dim,
                                   struct DdpsaElement *out);

/*
 Element-wise field sum of `count` vectors of length `dim`, as an
 intermediate server forms its partial sum.

 # Safety
 `vectors` must hold `count * dim` elements, `out` room for `dim`.
 */
enum DdpsaStatus ddpsa_aggregate(const struct DdpsaCodec *codec,
                                 const struct DdpsaElement *vectors,
                                 size_t count,
                                 size_t dim,
                                 struct DdpsaElement *out);

/*
 `dim` draws from Laplace(0, scale).

 # Safety
 `out` must have room for `dim` values.
 */
enum DdpsaStatus ddpsa_laplace_noise(struct DdpsaRng *rng, double scale, size_t dim, double *out);

/*
 Scales `g` onto the L1 ball of radius `clip_norm` if it lies outside.

 # Safety
 `g` and `out` must be valid for `dim` values; they may alias.
 */
enum DdpsaStatus ddpsa_clip_l1(const double *g, size_t dim, double clip_norm, double *out);

/*
 `(sum_clipped + Lap(clip_norm / epsilon)) / n_samples`.

 # Safety
 `sum_clipped` and `out` must be valid for `dim` values; they may alias.
 */
enum DdpsaStatus ddpsa_perturb_gradient(struct DdpsaRng *rng,
                                        const double *sum_clipped,
                                        size_t dim,
                                        size_t n_samples,
                                        double epsilon,
                                        double clip_norm,
                                        double *out);

/*
 Basic composition of `rounds` identical `(epsilon, delta)` rounds.

 # Safety
 `out_epsilon` and `out_delta` must be valid.
 */
enum DdpsaStatus ddpsa_compose_basic(double epsilon,
                                     double delta,
                                     uint64_t rounds,
                                     double *out_epsilon,
                                     double *out_delta);

/*
 Advanced composition of `rounds` identical rounds with slack `delta_prime`.

 # Safety
 `out_epsilon` and `out_delta` must be valid.
 */
enum DdpsaStatus ddpsa_compose_advanced(double epsilon,
                                        double delta,
                                        uint64_t rounds,
                                        double delta_prime,
                                        double *out_epsilon,
                                        double *out_delta);

/*
 Per-round budgets summing to `total`: uniform when `alpha <= 0`,
 geometric with ratio `alpha` otherwise.

 # Safety
 `out` must have room for `rounds` values.
 */
enum DdpsaStatus ddpsa_allocate_budget(double total, size_t rounds, double alpha, double *out);

/*
 # Safety
 `theta` must hold `dim` values; `out` must be valid.
 */
enum DdpsaStatus ddpsa_message_model_broadcast(uint64_t round_id,
                                               const double *theta,
                                               size_t dim,
                                               struct DdpsaMessage **out);

/*
 # Safety
 `values` must hold `dim` values; `out` must be valid.
 */
enum DdpsaStatus ddpsa_message_plain_upload(uint64_t round_id,
                                            uint32_t client_id,
                                            const double *values,
                                            size_t dim,
                                            struct DdpsaMessage **out);

/*
 # Safety
 `codec` and `out` must be valid; `elements` must hold `dim` items.
 */
enum DdpsaStatus ddpsa_message_share_upload(const struct DdpsaCodec *codec,
                                            uint64_t round_id,
                                            uint32_t client_id,
                                            uint16_t server_index,
                                            const struct DdpsaElement *elems,
                                            size_t dim,
                                            struct DdpsaMessage **out);

/*
 # Safety
 `codec` and `out` must be valid; `elements` must hold `dim` items.
 */
enum DdpsaStatus ddpsa_message_partial_sum(const struct DdpsaCodec *codec,
                                           uint64_t round_id,
                                           uint16_t server_index,
                                           const struct DdpsaElement *elems,
                                           size_t dim,
                                           struct DdpsaMessage **out);

/*
 # Safety
 `out` must be valid.
 */
enum DdpsaStatus ddpsa_message_round_ack(uint64_t round_id, struct DdpsaMessage **out);

/*
 # Safety
 `msg` must come from a `ddpsa_message_*` constructor or
 `ddpsa_frame_decode` and not be used afterwards.
 */
void ddpsa_message_free(struct DdpsaMessage *msg);

/*
 Frame type code (1 to 5), or 0 for a null handle.

 # Safety
 `msg` must be a valid handle or null.
 */
uint8_t ddpsa_message_type(const struct DdpsaMessage *msg);

/*
 # Safety
 `msg` must be a valid handle or null.
 */
uint64_t ddpsa_message_round(const struct DdpsaMessage *msg);

/*
 Sender-side identifier: client id for uploads, server index for partial
 sums, 0 otherwise.

 # Safety
 `msg` must be a valid handle or null.
 */
uint32_t ddpsa_message_sender_id(const struct DdpsaMessage *msg);

/*
 Copies the real-valued payload of a broadcast or plain upload. On entry
 `*len` is the capacity of `out`; on return it is the payload length.

 # Safety
 `msg` and `len` must be valid; `out` must have room for `*len` values.
 */
enum DdpsaStatus ddpsa_message_values(const struct DdpsaMessage *msg, double *out, size_t *len);

/*
 Copies the field-element payload of a share upload or partial sum, with
 the same length convention as `ddpsa_message_values`.

 # Safety
 `msg` and `len` must be valid; `out` must have room for `*len` items.
 */
enum DdpsaStatus ddpsa_message_elements(const struct DdpsaMessage *msg,
                                        struct DdpsaElement *out,
                                        size_t *len);

/*
 Serialises `msg` as one length-prefixed frame. `*written` receives the
 frame size, also when `cap` is too small.

 # Safety
 `msg` and `written` must be valid; `buf` must have room for `cap` bytes.
 */
enum DdpsaStatus ddpsa_frame_encode(const struct DdpsaMessage *msg,
                                    uint8_t *buf,
                                    size_t cap,
                                    size_t *written);

/*
 Parses one complete frame. Field elements are checked against the
 codec's modulus.

 # Safety
 `buf` must hold `len` bytes; `codec` and `out` must be valid.
 */
enum DdpsaStatus ddpsa_frame_decode(const struct DdpsaCodec *codec,
                                    const uint8_t *buf,
                                    size_t len,
                                    struct DdpsaMessage **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DDPSA_H */
