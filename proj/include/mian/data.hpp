#pragma once

#include "mian/io_error.hpp"
#include "mian/tensor.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace mian {

enum class FakeType : std::uint8_t {
  Real = 0,
  FabricatedText = 1,
  FabricatedImage = 2,
  Mismatched = 3,
  Unknown = 255,
};

inline constexpr int kFake = 0;
inline constexpr int kReal = 1;

std::string to_string(FakeType t);

/// One news item as embedded text tokens and image patches.
struct NewsSample {
  Matrix text_tokens;   // m×d, rows past the valid prefix are zero
  RowVector text_cls;   // d
  KeyMask text_mask;    // m, true = valid token
  Matrix image_patches; // u×d
  RowVector image_cls;  // d
  int label = kReal;    // 0 fake, 1 real
  FakeType fake_type = FakeType::Real;

  Index m() const { return text_tokens.rows(); }
  Index u() const { return image_patches.rows(); }
  Index d() const { return text_tokens.cols(); }
  Index n_valid_text() const { return text_mask.count(); }
};

/// Parameters of the synthetic fake-news generator. `class_mix` is indexed by
/// FakeType value: real, fabricated text, fabricated image, mismatched.
struct SynthSpec {
  Index n_samples = 2000;
  Index m = 16;
  Index u = 16;
  Index d = 32;
  Index n_topics = 8;
  Scalar noise_sigma = 0.1;
  Scalar corrupt_fraction = 0.25;
  std::array<Scalar, 4> class_mix{0.25, 0.25, 0.25, 0.25};
  std::uint64_t seed = 7;

  void validate() const;
};

/// Draws unit-norm topics and builds samples per fake type:
///  - real: text and image tokens share topic A, plus N(0, σ²) noise;
///  - fabricated text/image: topic A except ⌈corrupt_fraction·n⌉ tokens of that
///    modality drawn from topic B;
///  - mismatched: text from topic A, image from topic B.
/// Text length is uniform in [m/2, m] with the remainder masked; cls vectors are
/// the mean of the valid tokens plus noise. Per-type counts follow class_mix by
/// largest remainder. All values are rounded to float so the on-disk format
/// round-trips exactly.
std::vector<NewsSample> generate(const SynthSpec& spec);

/// Unit-norm topic vectors drawn for `spec` (n_topics×d), as used by generate().
Matrix generate_topics(const SynthSpec& spec);

inline constexpr char kEmbeddingMagic[] = "MIANEMB1";
inline constexpr std::uint32_t kEmbeddingVersion = 1;

/// MIANEMB1 encoding. Layout (little-endian): magic "MIANEMB1"; u32 version;
/// u32 N; u32 m; u32 u; u32 d; then per record: u8 label; u8 fake_type;
/// u32 n_valid_text_tokens; f32[d] text_cls; f32[m·d] text tokens; f32[d]
/// image_cls; f32[u·d] image patches. Text masks must be a valid prefix.
std::vector<std::uint8_t> encode_embeddings(std::span<const NewsSample> samples);
std::vector<NewsSample> decode_embeddings(std::span<const std::uint8_t> bytes);

void write_embeddings(std::span<const NewsSample> samples, const std::filesystem::path& path);
std::vector<NewsSample> read_embeddings(const std::filesystem::path& path);

struct SplitIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

/// Stratified by fake_type, deterministic under `seed`. The train size is
/// round(train_fraction·N), distributed over strata by largest remainder.
SplitIndices split_indices(std::span<const NewsSample> samples, Scalar train_fraction, std::uint64_t seed);

struct Split {
  std::vector<NewsSample> train;
  std::vector<NewsSample> test;
};

Split split(std::span<const NewsSample> samples, Scalar train_fraction, std::uint64_t seed);

}  // namespace mian
