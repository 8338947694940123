#include "gatescale/rewards/rewards.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstring>
#include <cmath>
#include <map>
#include <set>
#include <string>

#include "gatescale/dit/dataset.hpp"
#include "gatescale/numerics/errors.hpp"

namespace gatescale::rewards {

double template_correlation(const Tensor& image, std::size_t class_id) {
  if (class_id >= dit::kShapeClassCount)
    throw ContractError("template_correlation: class " + std::to_string(class_id) + " has no template");
  if (image.size() != dit::kPixels) throw DimensionError("template_correlation: image must have 64 pixels");
  const Tensor tpl = dit::class_template(class_id);
  const double n = static_cast<double>(dit::kPixels);
  const double mi = sum(image) / n;
  const double mt = sum(tpl) / n;
  double sii = 0.0, stt = 0.0, sit = 0.0;
  for (std::size_t k = 0; k < dit::kPixels; ++k) {
    const double a = image[k] - mi;
    const double b = tpl[k] - mt;
    sii += a * a;
    stt += b * b;
    sit += a * b;
  }
  if (sii / n < kDegenerateVariance || stt / n < kDegenerateVariance) return 0.0;
  const double r = sit / std::sqrt(sii * stt);
  return std::clamp(r, -1.0, 1.0);
}

namespace {

double squared_distance(const Tensor& a, const Tensor& b) {
  if (a.size() != b.size()) throw DimensionError("image sets have mismatched pixel counts");
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    const double d = a[k] - b[k];
    s += d * d;
  }
  return s;
}

double mean_kernel(std::span<const Tensor> x, std::span<const Tensor> y, double inv_two_h2) {
  double s = 0.0;
  for (const Tensor& a : x)
    for (const Tensor& b : y) s += std::exp(-squared_distance(a, b) * inv_two_h2);
  return s / (static_cast<double>(x.size()) * static_cast<double>(y.size()));
}

}  // namespace

double neg_mmd_rbf(std::span<const Tensor> samples, std::span<const Tensor> reference, double bandwidth) {
  if (samples.empty() || reference.empty()) throw ContractError("neg_mmd_rbf: both sets must be nonempty");
  if (!(bandwidth > 0.0) || !std::isfinite(bandwidth)) throw ContractError("neg_mmd_rbf: bandwidth must be > 0");
  const double c = 1.0 / (2.0 * bandwidth * bandwidth);
  const double mmd2 = mean_kernel(samples, samples, c) + mean_kernel(reference, reference, c) -
                      2.0 * mean_kernel(samples, reference, c);
  // The V-statistic is a squared RKHS norm; clip rounding below zero.
  return -std::max(mmd2, 0.0);
}

double pixel_range_penalty(const Tensor& image, double weight) {
  if (image.size() == 0) throw ContractError("pixel_range_penalty: empty image");
  double s = 0.0;
  for (double p : image.values()) {
    const double out = p < 0.0 ? -p : (p > 1.0 ? p - 1.0 : 0.0);
    s += out * out;
  }
  return -weight * s / static_cast<double>(image.size());
}

double diversity_pairwise(std::span<const Tensor> samples) {
  if (samples.size() < 2) throw ContractError("diversity_pairwise needs at least 2 samples");
  double total = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < samples.size(); ++i)
    for (std::size_t j = i + 1; j < samples.size(); ++j, ++pairs) total += std::sqrt(squared_distance(samples[i], samples[j]));
  return total / static_cast<double>(pairs) / std::sqrt(static_cast<double>(samples.front().size()));
}

// --- RewardSpec -------------------------------------------------------------

RewardSpec RewardSpec::template_correlation() { return RewardSpec{}; }

RewardSpec RewardSpec::neg_mmd_rbf(double bandwidth) {
  RewardSpec r;
  r.kind = RewardKind::NegMmdRbf;
  r.bandwidth = bandwidth;
  r.validate();
  return r;
}

RewardSpec RewardSpec::pixel_range_penalty(double weight) {
  RewardSpec r;
  r.kind = RewardKind::PixelRangePenalty;
  r.weight = weight;
  r.validate();
  return r;
}

RewardSpec RewardSpec::composite(std::vector<RewardTerm> terms) {
  RewardSpec r;
  r.kind = RewardKind::Composite;
  r.terms = std::move(terms);
  r.validate();
  return r;
}

RewardSpec RewardSpec::default_training() {
  return composite({{template_correlation(), 0.8}, {neg_mmd_rbf(2.0), 0.2}});
}

void RewardSpec::validate() const {
  switch (kind) {
    case RewardKind::TemplateCorrelation: break;
    case RewardKind::NegMmdRbf:
      if (!(bandwidth > 0.0) || !std::isfinite(bandwidth)) throw ContractError("MMD bandwidth must be finite and > 0");
      break;
    case RewardKind::PixelRangePenalty:
      if (!std::isfinite(weight)) throw ContractError("pixel range penalty weight must be finite");
      break;
    case RewardKind::Composite:
      for (const RewardTerm& t : terms) {
        if (!std::isfinite(t.weight)) throw ContractError("composite reward weights must be finite");
        t.spec.validate();
      }
      break;
  }
}

bool RewardSpec::needs_reference() const {
  if (kind == RewardKind::NegMmdRbf) return true;
  if (kind != RewardKind::Composite) return false;
  for (const RewardTerm& t : terms)
    if (t.spec.needs_reference()) return true;
  return false;
}

namespace {

std::string number(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

double parse_number(std::string_view s) {
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size())
    throw ContractError("reward spec: '" + std::string(s) + "' is not a number");
  return v;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

// Splits on `sep` outside parentheses.
std::vector<std::string_view> split_top(std::string_view s, char sep) {
  std::vector<std::string_view> parts;
  int depth = 0;
  std::size_t start = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '(') ++depth;
    if (s[i] == ')') --depth;
    if (depth < 0) throw ContractError("reward spec: unbalanced parentheses");
    // A sign directly after an exponent marker belongs to the number.
    const bool exponent_sign = i > 0 && (s[i - 1] == 'e' || s[i - 1] == 'E') && i >= 2 &&
                               (std::isdigit(static_cast<unsigned char>(s[i - 2])) || s[i - 2] == '.');
    if (depth == 0 && s[i] == sep && !exponent_sign) {
      parts.push_back(s.substr(start, i - start));
      start = i + 1;
    }
  }
  if (depth != 0) throw ContractError("reward spec: unbalanced parentheses");
  parts.push_back(s.substr(start));
  return parts;
}

bool call_form(std::string_view s, std::string_view fn, std::string_view& arg) {
  if (s.size() < fn.size() + 2 || s.substr(0, fn.size()) != fn || s[fn.size()] != '(' || s.back() != ')') return false;
  arg = trim(s.substr(fn.size() + 1, s.size() - fn.size() - 2));
  return true;
}

}  // namespace

std::string RewardSpec::name() const {
  switch (kind) {
    case RewardKind::TemplateCorrelation: return "template_correlation";
    case RewardKind::NegMmdRbf: return "neg_mmd_rbf(" + number(bandwidth) + ")";
    case RewardKind::PixelRangePenalty: return "pixel_range_penalty(" + number(weight) + ")";
    case RewardKind::Composite: {
      if (terms.empty()) return "composite()";
      std::string out;
      for (std::size_t i = 0; i < terms.size(); ++i) {
        if (i) out += '+';
        const RewardSpec& s = terms[i].spec;
        out += number(terms[i].weight) + "*";
        out += s.kind == RewardKind::Composite ? "(" + s.name() + ")" : s.name();
      }
      return out;
    }
  }
  return "?";
}

RewardSpec RewardSpec::parse(std::string_view text) {
  const std::string_view s = trim(text);
  if (s.empty()) throw ContractError("reward spec is empty");
  if (s == "composite()") return composite({});
  if (s == "template_correlation") return template_correlation();
  if (s == "default") return default_training();
  std::string_view arg;
  const auto sums = split_top(s, '+');
  if (sums.size() == 1 && split_top(s, '*').size() == 1) {
    if (call_form(s, "neg_mmd_rbf", arg)) return neg_mmd_rbf(parse_number(arg));
    if (call_form(s, "pixel_range_penalty", arg)) return pixel_range_penalty(parse_number(arg));
    if (s.front() == '(' && s.back() == ')') return parse(s.substr(1, s.size() - 2));
    throw ContractError("unknown reward '" + std::string(s) + "'");
  }
  std::vector<RewardTerm> terms;
  for (std::string_view part : sums) {
    const auto factors = split_top(trim(part), '*');
    if (factors.size() != 2) throw ContractError("reward term '" + std::string(part) + "' must be weight*reward");
    terms.push_back({parse(factors[1]), parse_number(trim(factors[0]))});
  }
  return composite(std::move(terms));
}

// --- references and scoring ---------------------------------------------------

ReferenceSet ReferenceSet::generate(std::size_t class_count, std::size_t count, double noise_std, std::uint64_t seed) {
  ReferenceSet r;
  for (std::size_t c = 0; c < class_count; ++c) r.per_class.push_back(dit::reference_images(c, count, noise_std, seed));
  return r;
}

const std::vector<Tensor>& ReferenceSet::of(std::size_t class_id) const {
  if (class_id >= per_class.size() || per_class[class_id].empty())
    throw ContractError("no reference images for class " + std::to_string(class_id));
  return per_class[class_id];
}

std::vector<double> score_images(const RewardSpec& reward, std::span<const Tensor> images,
                                 std::span<const std::size_t> classes, const ReferenceSet* references) {
  if (images.size() != classes.size()) throw DimensionError("score_images: one class per image required");
  std::vector<double> out(images.size(), 0.0);
  switch (reward.kind) {
    case RewardKind::TemplateCorrelation:
      for (std::size_t i = 0; i < images.size(); ++i) out[i] = template_correlation(images[i], classes[i]);
      break;
    case RewardKind::PixelRangePenalty:
      for (std::size_t i = 0; i < images.size(); ++i) out[i] = pixel_range_penalty(images[i], reward.weight);
      break;
    case RewardKind::NegMmdRbf: {
      if (!references) throw ContractError("MMD reward needs a reference set");
      std::map<std::size_t, std::vector<std::size_t>> groups;
      for (std::size_t i = 0; i < classes.size(); ++i) groups[classes[i]].push_back(i);
      for (const auto& [cls, idx] : groups) {
        std::vector<Tensor> group;
        for (std::size_t i : idx) group.push_back(images[i]);
        const double v = neg_mmd_rbf(group, references->of(cls), reward.bandwidth);
        for (std::size_t i : idx) out[i] = v;
      }
      break;
    }
    case RewardKind::Composite:
      for (const RewardTerm& t : reward.terms) {
        const std::vector<double> part = score_images(t.spec, images, classes, references);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += t.weight * part[i];
      }
      break;
  }
  return out;
}

// --- buckets --------------------------------------------------------------------

std::string_view to_string(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Heldout: return "heldout";
    case Split::Eval: return "eval";
  }
  return "?";
}

void Bucket::validate() const {
  if (items.empty()) throw ContractError("bucket must contain at least one item");
  std::set<std::uint64_t> seen;
  for (const BucketItem& it : items)
    if (!seen.insert(it.seed).second) throw ContractError("bucket seeds must be distinct");
}

namespace {

constexpr std::uint64_t kSplitShift = 62;
constexpr std::uint64_t kSeedMask = (std::uint64_t{1} << kSplitShift) - 1;

Bucket draw(Rng rng, Split split, std::span<const std::size_t> classes, std::size_t size) {
  if (classes.empty()) throw ContractError("bucket needs at least one class");
  if (size == 0) throw ContractError("bucket size must be >= 1");
  Bucket b;
  b.split = split;
  std::set<std::uint64_t> seen;
  const std::uint64_t tag = static_cast<std::uint64_t>(split) << kSplitShift;
  while (b.items.size() < size) {
    const std::size_t cls = classes[rng.below(classes.size())];
    const std::uint64_t seed = tag | (rng.next_u64() & kSeedMask);
    if (seen.insert(seed).second) b.items.push_back({cls, seed});
  }
  return b;
}

constexpr std::uint64_t kTrainBucketStream = 0x7472'6169'6e00ULL;
constexpr std::uint64_t kHeldoutBucketStream = 0x6865'6c64'6f75ULL;
constexpr std::uint64_t kEvalBucketStream = 0x6576'616c'0000ULL;

}  // namespace

Bucket Bucket::train(std::uint64_t run_seed, long generation, std::span<const std::size_t> classes, std::size_t size) {
  return draw(Rng(run_seed, kTrainBucketStream).split(static_cast<std::uint64_t>(generation)), Split::Train, classes,
              size);
}

Bucket Bucket::heldout(std::uint64_t run_seed, std::span<const std::size_t> classes, std::size_t size) {
  return draw(Rng(run_seed, kHeldoutBucketStream), Split::Heldout, classes, size);
}

Bucket Bucket::evaluation(std::uint64_t run_seed, std::span<const std::size_t> classes, std::size_t size) {
  if (classes.empty()) throw ContractError("bucket needs at least one class");
  if (size == 0) throw ContractError("bucket size must be >= 1");
  Bucket b;
  b.split = Split::Eval;
  Rng rng(run_seed, kEvalBucketStream);
  const std::uint64_t tag = static_cast<std::uint64_t>(Split::Eval) << kSplitShift;
  std::set<std::uint64_t> seen;
  while (b.items.size() < size) {
    const std::uint64_t seed = tag | (rng.next_u64() & kSeedMask);
    if (seen.insert(seed).second) b.items.push_back({classes[b.items.size() % classes.size()], seed});
  }
  return b;
}

bool BucketResult::same_scores(const BucketResult& o) const {
  if (scores.size() != o.scores.size()) return false;
  if (std::memcmp(&mean, &o.mean, sizeof mean) != 0) return false;
  return scores.empty() || std::memcmp(scores.data(), o.scores.data(), scores.size() * sizeof(double)) == 0;
}

BucketResult evaluate_field(const dit::VelocityField& field, std::size_t null_class, const Bucket& bucket,
                            const RewardSpec& reward, const ReferenceSet* references, std::size_t nfe,
                            double guidance_scale) {
  bucket.validate();
  reward.validate();
  if (nfe == 0) throw ContractError("nfe must be >= 1");
  std::vector<dit::SampleRequest> requests;
  std::vector<std::size_t> classes;
  for (const BucketItem& it : bucket.items) {
    requests.push_back({it.class_id, nfe, guidance_scale, it.seed});
    classes.push_back(it.class_id);
  }
  BucketResult r;
  r.images = dit::euler_sample_batch(field, null_class, requests);
  for (std::size_t i = 0; i < r.images.size(); ++i)
    if (!r.images[i].all_finite())
      throw EvaluationError("non-finite pixels in " + std::string(to_string(bucket.split)) + " bucket item " +
                            std::to_string(i) + " (class " + std::to_string(bucket.items[i].class_id) + ", seed " +
                            std::to_string(bucket.items[i].seed) + ")");
  r.scores = score_images(reward, r.images, classes, references);
  double total = 0.0;
  for (double s : r.scores) total += s;
  r.mean = total / static_cast<double>(r.scores.size());
  return r;
}

BucketResult evaluate_candidate(const calibration::CalibrationVector& candidate, const dit::DitModel& model,
                                const Bucket& bucket, const RewardSpec& reward, const ReferenceSet* references,
                                std::size_t nfe) {
  return evaluate_field(calibration::calibrated_field(model, candidate), model.arch().null_class(), bucket, reward,
                        references, nfe);
}

BucketResult evaluate_candidate(const calibration::EnsembleSpec& candidate, const dit::DitModel& model,
                                const Bucket& bucket, const RewardSpec& reward, const ReferenceSet* references,
                                std::size_t nfe) {
  return evaluate_field(calibration::ensemble_field(model, candidate), model.arch().null_class(), bucket, reward,
                        references, nfe);
}

}  // namespace gatescale::rewards
