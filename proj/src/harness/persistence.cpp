#include "gatescale/harness/persistence.hpp"

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "gatescale/harness/config.hpp"
#include "gatescale/numerics/errors.hpp"

namespace gatescale::harness {

static_assert(std::endian::native == std::endian::little, "payload is written in host byte order");

using nlohmann::json;

namespace {

std::string hex64(std::uint64_t v) {
  char buf[19];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::uint64_t parse_hex64(const std::string& s) {
  std::size_t used = 0;
  const unsigned long long v = std::stoull(s, &used, 16);
  if (used != s.size()) throw PersistenceError("bad hex value '" + s + "'");
  return v;
}

std::string reference_name(std::size_t class_id) { return "reference.class" + std::to_string(class_id); }

json arch_to_json(const dit::ArchSpec& a) {
  return json{{"variant", std::string(dit::to_string(a.variant))},
              {"depth", a.depth},
              {"model_dim", a.model_dim},
              {"heads", a.heads},
              {"text_tokens", a.text_tokens},
              {"class_count", a.class_count},
              {"ff_mult", a.ff_mult},
              {"positional_embedding", a.positional_embedding}};
}

dit::ArchSpec arch_from_json(const json& j) {
  dit::ArchSpec a;
  a.variant = dit::parse_variant(j.at("variant").get<std::string>());
  a.depth = j.at("depth").get<std::size_t>();
  a.model_dim = j.at("model_dim").get<std::size_t>();
  a.heads = j.at("heads").get<std::size_t>();
  a.text_tokens = j.at("text_tokens").get<std::size_t>();
  a.class_count = j.at("class_count").get<std::size_t>();
  a.ff_mult = j.at("ff_mult").get<std::size_t>();
  a.positional_embedding = j.at("positional_embedding").get<bool>();
  a.validate();
  return a;
}

}  // namespace

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  std::vector<std::pair<std::string, const Tensor*>> tensors;
  for (const auto& [name, t] : ckpt.model.weights()) tensors.emplace_back(name, &t);
  std::vector<Tensor> refs;
  refs.reserve(ckpt.references.per_class.size());
  for (std::size_t c = 0; c < ckpt.references.per_class.size(); ++c) {
    const auto& imgs = ckpt.references.per_class[c];
    Tensor packed({imgs.size(), dit::kPixels});
    for (std::size_t i = 0; i < imgs.size(); ++i)
      std::memcpy(packed.data().data() + i * dit::kPixels, imgs[i].data().data(), dit::kPixels * sizeof(double));
    refs.push_back(std::move(packed));
  }
  for (std::size_t c = 0; c < refs.size(); ++c) tensors.emplace_back(reference_name(c), &refs[c]);

  std::string payload;
  json table = json::array();
  for (const auto& [name, t] : tensors) {
    table.push_back({{"name", name}, {"offset", payload.size()}, {"shape", t->shape()}});
    payload.append(reinterpret_cast<const char*>(t->data().data()), t->size() * sizeof(double));
  }

  json manifest{{"format", "gatescale-checkpoint"},
                {"version", kCheckpointVersion},
                {"arch", arch_to_json(ckpt.model.arch())},
                {"arch_hash", hex64(ckpt.model.arch().hash())},
                {"seed", ckpt.seed},
                {"provenance", ckpt.provenance},
                {"tensors", table},
                {"payload_bytes", payload.size()},
                {"payload_fnv1a", hex64(dit::fnv1a(payload))}};
  manifest["manifest_fnv1a"] = hex64(dit::fnv1a(manifest.dump()));
  return manifest.dump() + "\n" + payload;
}

Checkpoint deserialize_checkpoint(const std::string& bytes) {
  const auto nl = bytes.find('\n');
  if (nl == std::string::npos) throw PersistenceError("checkpoint has no manifest line");
  json manifest;
  try {
    manifest = json::parse(bytes.substr(0, nl));
  } catch (const json::exception& e) {
    throw PersistenceError(std::string("checkpoint manifest is not valid JSON: ") + e.what());
  }
  try {
    if (manifest.at("format") != "gatescale-checkpoint") throw PersistenceError("not a gatescale checkpoint");
    if (manifest.at("version") != kCheckpointVersion)
      throw PersistenceError("unsupported checkpoint version " + manifest.at("version").dump());
    const std::string stored = manifest.at("manifest_fnv1a").get<std::string>();
    json unsigned_manifest = manifest;
    unsigned_manifest.erase("manifest_fnv1a");
    if (hex64(dit::fnv1a(unsigned_manifest.dump())) != stored) throw PersistenceError("checkpoint manifest hash mismatch");

    const std::string payload = bytes.substr(nl + 1);
    if (payload.size() != manifest.at("payload_bytes").get<std::size_t>())
      throw PersistenceError("checkpoint payload is " + std::to_string(payload.size()) + " bytes, manifest says " +
                             manifest.at("payload_bytes").dump());
    if (parse_hex64(manifest.at("payload_fnv1a").get<std::string>()) != dit::fnv1a(payload))
      throw PersistenceError("checkpoint payload hash mismatch");

    const dit::ArchSpec arch = arch_from_json(manifest.at("arch"));
    if (parse_hex64(manifest.at("arch_hash").get<std::string>()) != arch.hash())
      throw PersistenceError("checkpoint arch hash does not match its arch spec");

    dit::DitModel::WeightTable weights;
    std::map<std::size_t, Tensor> refs;
    std::size_t expected_offset = 0;
    for (const json& entry : manifest.at("tensors")) {
      const std::string name = entry.at("name").get<std::string>();
      const Shape shape = entry.at("shape").get<Shape>();
      const std::size_t offset = entry.at("offset").get<std::size_t>();
      std::size_t count = 1;
      for (std::size_t s : shape) count *= s;
      // Tensors are packed back to back; anything else overlaps or leaves gaps.
      if (offset != expected_offset || offset + count * sizeof(double) > payload.size())
        throw PersistenceError("tensor '" + name + "' has an invalid offset");
      expected_offset = offset + count * sizeof(double);
      Tensor t(shape);
      std::memcpy(t.data().data(), payload.data() + offset, count * sizeof(double));
      if (name.rfind("reference.class", 0) == 0) {
        refs[std::stoul(name.substr(15))] = std::move(t);
      } else if (!weights.emplace(name, std::move(t)).second) {
        throw PersistenceError("duplicate tensor '" + name + "'");
      }
    }
    if (expected_offset != payload.size()) throw PersistenceError("checkpoint payload has trailing bytes");

    Checkpoint ckpt{dit::DitModel(arch, std::move(weights)), {}, manifest.at("seed").get<std::uint64_t>(),
                    manifest.at("provenance").get<std::map<std::string, std::string>>()};
    for (const auto& [cls, packed] : refs) {
      if (cls != ckpt.references.per_class.size()) throw PersistenceError("reference classes are not contiguous");
      std::vector<Tensor> imgs;
      for (std::size_t i = 0; i < packed.rows(); ++i) {
        Tensor img({dit::kImageSide, dit::kImageSide});
        std::memcpy(img.data().data(), packed.data().data() + i * dit::kPixels, dit::kPixels * sizeof(double));
        imgs.push_back(std::move(img));
      }
      ckpt.references.per_class.push_back(std::move(imgs));
    }
    return ckpt;
  } catch (const json::exception& e) {
    throw PersistenceError(std::string("malformed checkpoint manifest: ") + e.what());
  } catch (const ContractError& e) {
    throw PersistenceError(std::string("invalid checkpoint contents: ") + e.what());
  } catch (const DimensionError& e) {
    throw PersistenceError(std::string("invalid checkpoint contents: ") + e.what());
  } catch (const NumericError& e) {
    throw PersistenceError(std::string("invalid checkpoint contents: ") + e.what());
  }
}

void write_file(const std::string& path, const std::string& bytes) {
  const std::filesystem::path p(path);
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw PersistenceError("cannot write '" + path + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw PersistenceError("short write to '" + path + "'");
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw PersistenceError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) { write_file(path, serialize_checkpoint(ckpt)); }

Checkpoint load_checkpoint(const std::string& path) { return deserialize_checkpoint(read_file(path)); }

// --- sidecar ----------------------------------------------------------------------

namespace {

std::string join_doubles(const std::vector<double>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    out += format_csv_double(v[i]);
  }
  return out;
}

std::vector<double> split_doubles(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t used = 0;
    out.push_back(std::stod(item, &used));
    if (used != item.size()) throw PersistenceError("bad number '" + item + "' in sidecar");
  }
  return out;
}

calibration::EnsembleSpec spec_from(const Sidecar& s, const std::vector<double>& flat, const dit::ArchSpec& arch) {
  if (arch.hash() != s.arch_hash) throw CalibrationShapeError("calibration sidecar was made for a different architecture");
  return calibration::EnsembleSpec::from_flat(flat, s.granularity, arch, s.roles);
}

}  // namespace

calibration::EnsembleSpec Sidecar::selected_spec(const dit::ArchSpec& arch) const { return spec_from(*this, selected, arch); }
calibration::EnsembleSpec Sidecar::mean_spec(const dit::ArchSpec& arch) const { return spec_from(*this, mean, arch); }

std::string serialize_sidecar(const Sidecar& s) {
  std::string out;
  const auto line = [&](const std::string& k, const std::string& v) { out += k + " = " + v + "\n"; };
  line("format", "gatescale-calibration");
  line("format_version", std::to_string(kSidecarVersion));
  line("arch_hash", hex64(s.arch_hash));
  line("granularity", std::string(calibration::to_string(s.granularity)));
  line("members", std::to_string(s.roles.size()));
  const std::size_t per = s.roles.empty() ? 0 : s.selected.size() / s.roles.size();
  for (std::size_t m = 0; m < s.roles.size(); ++m) {
    const std::string p = "member" + std::to_string(m) + ".";
    line(p + "role", std::string(calibration::to_string(s.roles[m])));
    line(p + "omega", format_csv_double(s.selected[m * per]));
    line(p + "scales", join_doubles({s.selected.begin() + m * per + 1, s.selected.begin() + (m + 1) * per}));
  }
  line("selected", join_doubles(s.selected));
  line("mean", join_doubles(s.mean));
  for (const auto& [k, v] : s.provenance) line("provenance." + k, v);
  return out;
}

Sidecar parse_sidecar(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::stringstream ss(text);
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(ss, raw)) {
    ++line_no;
    if (raw.empty()) continue;
    const auto eq = raw.find(" = ");
    if (eq == std::string::npos) throw PersistenceError("sidecar line " + std::to_string(line_no) + " is not 'key = value'");
    kv[raw.substr(0, eq)] = raw.substr(eq + 3);
  }
  const auto need = [&](const std::string& k) -> const std::string& {
    const auto it = kv.find(k);
    if (it == kv.end()) throw PersistenceError("sidecar is missing '" + k + "'");
    return it->second;
  };
  if (need("format") != "gatescale-calibration") throw PersistenceError("not a calibration sidecar");
  if (need("format_version") != std::to_string(kSidecarVersion)) throw PersistenceError("unsupported sidecar version");
  Sidecar s;
  try {
    s.arch_hash = parse_hex64(need("arch_hash"));
    s.granularity = calibration::parse_granularity(need("granularity"));
    const std::size_t members = std::stoul(need("members"));
    for (std::size_t m = 0; m < members; ++m)
      s.roles.push_back(calibration::parse_role(need("member" + std::to_string(m) + ".role")));
    s.selected = split_doubles(need("selected"));
    s.mean = split_doubles(need("mean"));
  } catch (const std::logic_error& e) {
    throw PersistenceError(std::string("malformed sidecar: ") + e.what());
  }
  if (s.roles.empty() || s.selected.size() % s.roles.size() != 0 || s.mean.size() != s.selected.size())
    throw PersistenceError("sidecar vectors do not match its member count");
  for (const auto& [k, v] : kv)
    if (k.rfind("provenance.", 0) == 0) s.provenance[k.substr(11)] = v;
  return s;
}

void save_sidecar(const std::string& path, const Sidecar& s) { write_file(path, serialize_sidecar(s)); }

Sidecar load_sidecar(const std::string& path) { return parse_sidecar(read_file(path)); }

}  // namespace gatescale::harness
