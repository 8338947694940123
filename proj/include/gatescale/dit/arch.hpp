#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>

namespace gatescale::dit {

enum class Variant { StandardDit, MmDit };

std::string_view to_string(Variant v);
/// Accepts "standard" / "mmdit" (and the enum spellings).
Variant parse_variant(std::string_view s);

inline constexpr std::size_t kImageSide = 8;
inline constexpr std::size_t kPatchSide = 2;
inline constexpr std::size_t kImageTokens = (kImageSide / kPatchSide) * (kImageSide / kPatchSide);
inline constexpr std::size_t kPatchDim = kPatchSide * kPatchSide;
inline constexpr std::size_t kPixels = kImageSide * kImageSide;

struct ArchSpec {
  Variant variant = Variant::StandardDit;
  std::size_t depth = 6;
  std::size_t model_dim = 32;
  std::size_t heads = 4;
  std::size_t text_tokens = 4;  // MmDit only
  std::size_t class_count = 4;  // real classes; id == class_count is the null class
  std::size_t ff_mult = 4;
  bool positional_embedding = true;

  std::size_t null_class() const noexcept { return class_count; }
  std::size_t ff_dim() const noexcept { return ff_mult * model_dim; }
  /// γ gates per block: 2 (attention, FF) or 4 (× visual/text).
  std::size_t gates_per_block() const noexcept { return variant == Variant::MmDit ? 4 : 2; }
  /// Width of a block's modulation output across all modalities.
  std::size_t modulation_width() const noexcept { return (variant == Variant::MmDit ? 12 : 6) * model_dim; }

  /// Throws ContractError on an inconsistent spec.
  void validate() const;
  /// Canonical one-line description; the hash is taken over this string.
  std::string canonical() const;
  std::uint64_t hash() const;

  friend bool operator==(const ArchSpec&, const ArchSpec&) = default;
};

/// FNV-1a over bytes.
std::uint64_t fnv1a(std::string_view bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);

}  // namespace gatescale::dit
