#include "mian/data.hpp"

#include "binary_io.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>
#include <stdexcept>

namespace mian {

std::string to_string(FakeType t) {
  switch (t) {
    case FakeType::Real: return "real";
    case FakeType::FabricatedText: return "fabricated_text";
    case FakeType::FabricatedImage: return "fabricated_image";
    case FakeType::Mismatched: return "mismatched";
    case FakeType::Unknown: return "unknown";
  }
  return "invalid";
}

namespace {

bool valid_fake_type(std::uint8_t v) { return v <= 3 || v == 255; }

// Largest-remainder apportionment of `total` units over `weights`; ties go to
// the lower index.
std::vector<Index> apportion(std::span<const Scalar> weights, Index total) {
  const Scalar sum = std::accumulate(weights.begin(), weights.end(), 0.0);
  std::vector<Index> counts(weights.size());
  std::vector<std::pair<Scalar, std::size_t>> remainders;
  Index assigned = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const Scalar quota = weights[i] / sum * static_cast<Scalar>(total);
    counts[i] = static_cast<Index>(std::floor(quota));
    assigned += counts[i];
    remainders.emplace_back(quota - std::floor(quota), i);
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t k = 0; assigned < total; ++k, ++assigned) ++counts[remainders[k % remainders.size()].second];
  return counts;
}

Scalar to_f32(Scalar x) { return static_cast<Scalar>(static_cast<float>(x)); }

Matrix draw_topics(std::mt19937_64& rng, const SynthSpec& spec) {
  std::normal_distribution<Scalar> normal(0.0, 1.0);
  Matrix topics(spec.n_topics, spec.d);
  for (Index t = 0; t < spec.n_topics; ++t) {
    for (Index j = 0; j < spec.d; ++j) topics(t, j) = normal(rng);
    topics.row(t).normalize();
  }
  return topics;
}

}  // namespace

void SynthSpec::validate() const {
  if (n_samples < 1 || m < 1 || u < 1 || d < 1) {
    throw std::invalid_argument("SynthSpec: n_samples, m, u and d must be positive");
  }
  if (n_topics < 2) {
    throw std::invalid_argument("SynthSpec: n_topics must be at least 2 to build mismatched pairs, got " +
                                std::to_string(n_topics));
  }
  if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma)) {
    throw std::invalid_argument("SynthSpec: noise_sigma must be finite and non-negative");
  }
  if (!(corrupt_fraction > 0.0 && corrupt_fraction < 1.0)) {
    throw std::invalid_argument("SynthSpec: corrupt_fraction must lie in (0, 1)");
  }
  Scalar total = 0.0;
  for (Scalar p : class_mix) {
    if (!(p >= 0.0)) throw std::invalid_argument("SynthSpec: class_mix entries must be non-negative");
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-9) {
    throw std::invalid_argument("SynthSpec: class_mix must sum to 1, got " + std::to_string(total));
  }
}

Matrix generate_topics(const SynthSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  return draw_topics(rng, spec);
}

std::vector<NewsSample> generate(const SynthSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  const Matrix topics = draw_topics(rng, spec);
  std::normal_distribution<Scalar> noise(0.0, 1.0);

  const std::vector<Index> counts = apportion(spec.class_mix, spec.n_samples);
  std::vector<FakeType> types;
  types.reserve(static_cast<std::size_t>(spec.n_samples));
  for (std::size_t t = 0; t < counts.size(); ++t) {
    types.insert(types.end(), static_cast<std::size_t>(counts[t]), static_cast<FakeType>(t));
  }
  std::shuffle(types.begin(), types.end(), rng);

  std::uniform_int_distribution<Index> topic_dist(0, spec.n_topics - 1);
  std::uniform_int_distribution<Index> other_dist(0, spec.n_topics - 2);
  std::uniform_int_distribution<Index> length_dist(std::max<Index>(1, spec.m / 2), spec.m);

  auto fill = [&](Matrix& rows, Index n_rows, Index topic) {
    for (Index i = 0; i < n_rows; ++i) {
      for (Index j = 0; j < spec.d; ++j) rows(i, j) = topics(topic, j) + spec.noise_sigma * noise(rng);
    }
  };
  // ⌈fraction·n⌉ rows, at random positions, replaced by the other topic.
  auto corrupt = [&](Matrix& rows, Index n_rows, Index topic) {
    std::vector<Index> positions(static_cast<std::size_t>(n_rows));
    std::iota(positions.begin(), positions.end(), 0);
    std::shuffle(positions.begin(), positions.end(), rng);
    const auto k = static_cast<Index>(std::ceil(spec.corrupt_fraction * static_cast<Scalar>(n_rows)));
    for (Index r = 0; r < k; ++r) {
      for (Index j = 0; j < spec.d; ++j) {
        rows(positions[r], j) = topics(topic, j) + spec.noise_sigma * noise(rng);
      }
    }
  };
  auto summary = [&](const Matrix& rows, Index n_rows) {
    RowVector cls = rows.topRows(n_rows).colwise().mean();
    for (Index j = 0; j < spec.d; ++j) cls(j) += spec.noise_sigma * noise(rng);
    return cls;
  };

  std::vector<NewsSample> out;
  out.reserve(types.size());
  for (FakeType type : types) {
    const Index topic_a = topic_dist(rng);
    Index topic_b = other_dist(rng);
    if (topic_b >= topic_a) ++topic_b;
    const Index n_valid = length_dist(rng);

    NewsSample s;
    s.fake_type = type;
    s.label = type == FakeType::Real ? kReal : kFake;
    s.text_tokens = Matrix::Zero(spec.m, spec.d);
    s.image_patches = Matrix::Zero(spec.u, spec.d);
    s.text_mask = KeyMask::Constant(spec.m, false);
    s.text_mask.head(n_valid).setConstant(true);

    fill(s.text_tokens, n_valid, topic_a);
    fill(s.image_patches, spec.u, type == FakeType::Mismatched ? topic_b : topic_a);
    if (type == FakeType::FabricatedText) corrupt(s.text_tokens, n_valid, topic_b);
    if (type == FakeType::FabricatedImage) corrupt(s.image_patches, spec.u, topic_b);
    s.text_cls = summary(s.text_tokens, n_valid);
    s.image_cls = summary(s.image_patches, spec.u);

    s.text_tokens = s.text_tokens.unaryExpr(&to_f32);
    s.image_patches = s.image_patches.unaryExpr(&to_f32);
    s.text_cls = s.text_cls.unaryExpr(&to_f32);
    s.image_cls = s.image_cls.unaryExpr(&to_f32);
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<std::uint8_t> encode_embeddings(std::span<const NewsSample> samples) {
  if (samples.empty()) throw std::invalid_argument("encode_embeddings: no samples");
  const NewsSample& first = samples.front();
  const Index m = first.m(), u = first.u(), d = first.d();

  detail::ByteWriter w;
  w.bytes(std::string_view(kEmbeddingMagic, 8));
  w.uint<std::uint32_t>(kEmbeddingVersion);
  w.uint<std::uint32_t>(static_cast<std::uint32_t>(samples.size()));
  w.uint<std::uint32_t>(static_cast<std::uint32_t>(m));
  w.uint<std::uint32_t>(static_cast<std::uint32_t>(u));
  w.uint<std::uint32_t>(static_cast<std::uint32_t>(d));

  for (std::size_t r = 0; r < samples.size(); ++r) {
    const NewsSample& s = samples[r];
    const std::string where = "encode_embeddings: record " + std::to_string(r);
    if (s.m() != m || s.u() != u || s.d() != d || s.image_patches.cols() != d || s.text_cls.size() != d ||
        s.image_cls.size() != d || s.text_mask.size() != m) {
      throw DimensionError(where + " has inconsistent dimensions");
    }
    if (s.label != kFake && s.label != kReal) throw std::invalid_argument(where + ": label must be 0 or 1");
    const Index n_valid = s.n_valid_text();
    if (n_valid < 1 || !s.text_mask.head(n_valid).all()) {
      throw std::invalid_argument(where + ": text mask must be a non-empty valid prefix");
    }
    if (!s.text_tokens.allFinite() || !s.image_patches.allFinite() || !s.text_cls.allFinite() ||
        !s.image_cls.allFinite()) {
      throw std::invalid_argument(where + ": non-finite embedding value");
    }
    w.uint<std::uint8_t>(static_cast<std::uint8_t>(s.label));
    w.uint<std::uint8_t>(static_cast<std::uint8_t>(s.fake_type));
    w.uint<std::uint32_t>(static_cast<std::uint32_t>(n_valid));
    for (Index j = 0; j < d; ++j) w.f32(static_cast<float>(s.text_cls(j)));
    for (Index i = 0; i < m; ++i) {
      for (Index j = 0; j < d; ++j) w.f32(i < n_valid ? static_cast<float>(s.text_tokens(i, j)) : 0.0f);
    }
    for (Index j = 0; j < d; ++j) w.f32(static_cast<float>(s.image_cls(j)));
    for (Index i = 0; i < u; ++i) {
      for (Index j = 0; j < d; ++j) w.f32(static_cast<float>(s.image_patches(i, j)));
    }
  }
  return w.take();
}

std::vector<NewsSample> decode_embeddings(std::span<const std::uint8_t> bytes) {
  detail::ByteReader r(bytes);
  const std::string magic = r.bytes(8, "magic");
  if (magic != std::string_view(kEmbeddingMagic, 8)) throw ParseError(0, "bad magic, expected MIANEMB1");
  const std::uint64_t version_at = r.offset();
  const auto version = r.uint<std::uint32_t>("version");
  if (version != kEmbeddingVersion) {
    throw ParseError(version_at, "unsupported version " + std::to_string(version));
  }
  const auto n = r.uint<std::uint32_t>("record count");
  const std::uint64_t dims_at = r.offset();
  const auto m = r.uint<std::uint32_t>("m");
  const auto u = r.uint<std::uint32_t>("u");
  const auto d = r.uint<std::uint32_t>("d");
  if (m == 0 || u == 0 || d == 0) throw ParseError(dims_at, "m, u and d must be positive");

  const std::uint64_t record_size = 2 + 4 + 4ull * d * (2ull + m + u);
  const std::uint64_t payload = r.remaining();
  if (payload != record_size * n && (payload % record_size == 0 || payload > record_size * n)) {
    throw ParseError(r.offset(), "record count mismatch: header declares " + std::to_string(n) +
                                     " records, payload holds " + std::to_string(payload / record_size) +
                                     (payload % record_size ? " plus " + std::to_string(payload % record_size) +
                                                                  " stray bytes"
                                                            : std::string()));
  }

  auto read_floats = [&](Index count, Scalar* dst, const char* what) {
    for (Index k = 0; k < count; ++k) {
      const std::uint64_t at = r.offset();
      const float v = r.f32(what);
      if (!std::isfinite(v)) throw ParseError(at, std::string("non-finite value in ") + what);
      dst[k] = static_cast<Scalar>(v);
    }
  };

  std::vector<NewsSample> out;
  out.reserve(n);
  for (std::uint32_t rec = 0; rec < n; ++rec) {
    NewsSample s;
    const std::uint64_t label_at = r.offset();
    const auto label = r.uint<std::uint8_t>("label");
    const auto type = r.uint<std::uint8_t>("fake_type");
    if (label > 1) throw ParseError(label_at, "label must be 0 or 1, got " + std::to_string(label));
    if (!valid_fake_type(type)) throw ParseError(label_at + 1, "unknown fake_type " + std::to_string(type));
    if (type != 255 && ((type == 0) != (label == kReal))) {
      throw ParseError(label_at, "label " + std::to_string(label) + " contradicts fake_type " +
                                     std::to_string(type));
    }
    const std::uint64_t valid_at = r.offset();
    const auto n_valid = r.uint<std::uint32_t>("n_valid_text_tokens");
    if (n_valid < 1 || n_valid > m) {
      throw ParseError(valid_at, "n_valid_text_tokens " + std::to_string(n_valid) + " outside [1, " +
                                     std::to_string(m) + "]");
    }
    s.label = label;
    s.fake_type = static_cast<FakeType>(type);
    s.text_cls.resize(d);
    s.text_tokens.resize(m, d);
    s.image_cls.resize(d);
    s.image_patches.resize(u, d);
    read_floats(d, s.text_cls.data(), "text_cls");
    const std::uint64_t tokens_at = r.offset();
    read_floats(static_cast<Index>(m) * d, s.text_tokens.data(), "text tokens");
    for (Index i = n_valid; i < m; ++i) {
      if (!s.text_tokens.row(i).isZero(0.0)) {
        throw ParseError(tokens_at + 4ull * i * d, "padding token row " + std::to_string(i) + " is not zero");
      }
    }
    read_floats(d, s.image_cls.data(), "image_cls");
    read_floats(static_cast<Index>(u) * d, s.image_patches.data(), "image patches");
    s.text_mask = KeyMask::Constant(m, false);
    s.text_mask.head(n_valid).setConstant(true);
    out.push_back(std::move(s));
  }
  return out;
}

void write_embeddings(std::span<const NewsSample> samples, const std::filesystem::path& path) {
  detail::write_file(path, encode_embeddings(samples));
}

std::vector<NewsSample> read_embeddings(const std::filesystem::path& path) {
  const std::vector<std::uint8_t> bytes = detail::read_file(path);
  return decode_embeddings(bytes);
}

SplitIndices split_indices(std::span<const NewsSample> samples, Scalar train_fraction, std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw std::invalid_argument("split: train_fraction must lie in (0, 1)");
  }
  std::map<std::uint8_t, std::vector<std::size_t>> strata;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    strata[static_cast<std::uint8_t>(samples[i].fake_type)].push_back(i);
  }
  std::vector<Scalar> sizes;
  for (const auto& [type, members] : strata) {
    if (members.size() < 2) {
      throw std::invalid_argument("split: fake_type " + std::to_string(type) + " has fewer than 2 samples");
    }
    sizes.push_back(static_cast<Scalar>(members.size()));
  }
  const auto n_train = static_cast<Index>(std::llround(train_fraction * static_cast<Scalar>(samples.size())));
  const std::vector<Index> quota = apportion(sizes, n_train);

  std::mt19937_64 rng(seed);
  SplitIndices out;
  std::size_t k = 0;
  for (auto& [type, members] : strata) {
    std::shuffle(members.begin(), members.end(), rng);
    const auto take = static_cast<std::size_t>(quota[k++]);
    out.train.insert(out.train.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(take));
    out.test.insert(out.test.end(), members.begin() + static_cast<std::ptrdiff_t>(take), members.end());
  }
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.test.begin(), out.test.end());
  return out;
}

Split split(std::span<const NewsSample> samples, Scalar train_fraction, std::uint64_t seed) {
  const SplitIndices idx = split_indices(samples, train_fraction, seed);
  Split out;
  for (std::size_t i : idx.train) out.train.push_back(samples[i]);
  for (std::size_t i : idx.test) out.test.push_back(samples[i]);
  return out;
}

}  // namespace mian
