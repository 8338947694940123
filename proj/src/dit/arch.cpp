#include "gatescale/dit/arch.hpp"

#include <sstream>

#include "gatescale/numerics/errors.hpp"

namespace gatescale::dit {

std::string_view to_string(Variant v) { return v == Variant::MmDit ? "mmdit" : "standard"; }

Variant parse_variant(std::string_view s) {
  if (s == "standard" || s == "StandardDit") return Variant::StandardDit;
  if (s == "mmdit" || s == "MmDit") return Variant::MmDit;
  throw ContractError("unknown variant '" + std::string(s) + "' (expected standard|mmdit)");
}

void ArchSpec::validate() const {
  if (depth == 0) throw ContractError("arch: depth must be positive");
  if (model_dim < 2) throw ContractError("arch: model_dim must be >= 2");
  if (heads == 0 || model_dim % heads != 0) throw ContractError("arch: model_dim must be divisible by heads");
  if (model_dim % 2 != 0) throw ContractError("arch: model_dim must be even (sinusoidal time embedding)");
  if (class_count == 0) throw ContractError("arch: class_count must be positive");
  if (ff_mult == 0) throw ContractError("arch: ff_mult must be positive");
  if (variant == Variant::MmDit && text_tokens == 0) throw ContractError("arch: mmdit needs text tokens");
}

std::string ArchSpec::canonical() const {
  std::ostringstream os;
  os << "variant=" << to_string(variant) << ";depth=" << depth << ";model_dim=" << model_dim << ";heads=" << heads
     << ";text_tokens=" << (variant == Variant::MmDit ? text_tokens : 0) << ";class_count=" << class_count
     << ";ff_mult=" << ff_mult << ";pos=" << (positional_embedding ? 1 : 0);
  return os.str();
}

std::uint64_t fnv1a(std::string_view bytes, std::uint64_t seed) {
  std::uint64_t h = seed;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t ArchSpec::hash() const { return fnv1a(canonical()); }

}  // namespace gatescale::dit
