#include "densforge/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <sstream>

#include "densforge/error.hpp"
#include "densforge/io.hpp"
#include "densforge/parallel.hpp"
#include "densforge/random.hpp"

namespace densforge {

namespace fs = std::filesystem;

std::string to_string(Split split) { return split == Split::train ? "train" : "test"; }

Split parse_split(const std::string& name) {
  if (name == "train") return Split::train;
  if (name == "test") return Split::test;
  throw InvalidInput("unknown split '" + name + "'");
}

void PoisonSpec::validate() const {
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw ConfigError("poisoning rate gamma must lie in [0,1]");
  blend.validate();
  if (alter.strategy == Strategy::dmba_minus && !(alter.rho >= 0.0 && alter.rho <= 1.0))
    throw ConfigError("dmba-minus needs rho in [0,1]");
  if (alter.strategy == Strategy::dmba_plus && !(alter.rho >= 1.0))
    throw ConfigError("dmba-plus needs rho >= 1");
  if (alter.strategy == Strategy::dmba_plus_plus && !(alter.rho >= 0.0))
    throw ConfigError("dmba-plus-plus needs rho >= 0");
}

std::vector<const SampleRecord*> DatasetManifest::split(Split which) const {
  std::vector<const SampleRecord*> out;
  for (const auto& s : samples)
    if (s.split == which) out.push_back(&s);
  return out;
}

const SampleRecord* DatasetManifest::find(const std::string& id) const {
  for (const auto& s : samples)
    if (s.id == id) return &s;
  return nullptr;
}

namespace {

constexpr const char* kManifestHeader = "DENSFORGE-MANIFEST v1";

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  while (true) {
    const auto tab = line.find('\t', start);
    fields.push_back(line.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
    if (tab == std::string::npos) break;
    start = tab + 1;
  }
  return fields;
}

std::string provenance_name(Provenance p) {
  switch (p) {
    case Provenance::clean: return "clean";
    case Provenance::poisoned: return "poisoned";
    case Provenance::triggered: return "triggered";
  }
  return "clean";
}

Provenance parse_provenance(const std::string& name) {
  if (name == "clean") return Provenance::clean;
  if (name == "poisoned") return Provenance::poisoned;
  if (name == "triggered") return Provenance::triggered;
  throw InvalidInput("unknown provenance '" + name + "'");
}

}  // namespace

std::string encode_manifest(const DatasetManifest& manifest) {
  std::string out = std::string(kManifestHeader) + "\n";
  for (const auto& s : manifest.samples) {
    out += s.id + "\t" + to_string(s.split) + "\t" + (s.poisoned ? "1" : "0") + "\t" + s.image_path + "\t" +
           s.points_path + "\t" + s.density_path + "\t" +
           (s.achieved_rho ? format_double(*s.achieved_rho) : std::string("-")) + "\n";
  }
  return out;
}

std::vector<SampleRecord> decode_manifest(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != kManifestHeader) throw InvalidInput("missing manifest header");
  std::vector<SampleRecord> records;
  std::set<std::string> ids;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = split_tabs(line);
    if (f.size() != 7) throw InvalidInput("manifest record needs 7 tab-separated fields: " + line);
    SampleRecord r;
    r.id = f[0];
    r.split = parse_split(f[1]);
    if (f[2] != "0" && f[2] != "1") throw InvalidInput("poisoned flag must be 0 or 1");
    r.poisoned = f[2] == "1";
    r.image_path = f[3];
    r.points_path = f[4];
    r.density_path = f[5];
    if (f[6] != "-" && !f[6].empty()) r.achieved_rho = parse_double(f[6], "achieved_rho");
    if (!ids.insert(r.id).second) throw InvalidInput("duplicate sample id '" + r.id + "'");
    records.push_back(std::move(r));
  }
  return records;
}

std::string encode_sidecar(const DatasetManifest& m) {
  std::ostringstream out;
  out << "name=" << m.name << "\n";
  out << "provenance=" << provenance_name(m.provenance) << "\n";
  out << "kernel.beta=" << format_double(m.kernel.beta) << "\n";
  out << "kernel.k_neighbors=" << m.kernel.k_neighbors << "\n";
  out << "kernel.truncation_radius=" << format_double(m.kernel.truncation_radius) << "\n";
  out << "kernel.sigma_fallback=" << format_double(m.kernel.sigma_fallback) << "\n";
  out << "kernel.normalize_per_head=" << (m.kernel.normalize_per_head ? 1 : 0) << "\n";
  if (m.poison) {
    const PoisonSpec& p = *m.poison;
    const TriggerParams& t = p.trigger.params;
    out << "strategy=" << to_string(p.alter.strategy) << "\n";
    out << "rho=" << format_double(p.alter.rho) << "\n";
    out << "seed=" << p.alter.seed << "\n";
    out << "gamma=" << format_double(p.gamma) << "\n";
    out << "lambda=" << format_double(p.blend.lambda) << "\n";
    out << "resize_filter=" << (p.blend.resize_filter == ResizeFilter::nearest ? "nearest" : "bilinear") << "\n";
    out << "trigger.kind=" << to_string(p.trigger.kind) << "\n";
    out << "trigger.seed=" << p.trigger.seed << "\n";
    out << "trigger.rain_streaks=" << t.rain_streaks << "\n";
    out << "trigger.rain_angle_deg=" << format_double(t.rain_angle_deg) << "\n";
    out << "trigger.rain_length=" << t.rain_length << "\n";
    out << "trigger.snow_flakes=" << t.snow_flakes << "\n";
    out << "trigger.snow_radius=" << format_double(t.snow_radius) << "\n";
    out << "trigger.light_center_row=" << format_double(t.light_center_row) << "\n";
    out << "trigger.light_center_col=" << format_double(t.light_center_col) << "\n";
    out << "trigger.light_falloff=" << format_double(t.light_falloff) << "\n";
    out << "trigger.light_peak=" << format_double(t.light_peak) << "\n";
    out << "trigger.patch_side=" << t.patch_side << "\n";
    out << "trigger.patch_cell=" << t.patch_cell << "\n";
    out << "trigger.region_height=" << t.region_height << "\n";
    out << "trigger.region_width=" << t.region_width << "\n";
    out << "trigger.custom_path=" << t.custom_path << "\n";
  }
  return out.str();
}

void decode_sidecar(const std::string& text, DatasetManifest& m) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw InvalidInput("sidecar line must be key=value: " + line);
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  auto get = [&](const std::string& key) -> const std::string& {
    auto it = kv.find(key);
    if (it == kv.end()) throw InvalidInput("sidecar missing key '" + key + "'");
    return it->second;
  };
  auto num = [&](const std::string& key) { return parse_double(get(key), key); };
  auto integer = [&](const std::string& key) { return parse_int(get(key), key); };

  m.name = get("name");
  m.provenance = parse_provenance(get("provenance"));
  m.kernel.beta = num("kernel.beta");
  m.kernel.k_neighbors = static_cast<int>(integer("kernel.k_neighbors"));
  m.kernel.truncation_radius = num("kernel.truncation_radius");
  m.kernel.sigma_fallback = num("kernel.sigma_fallback");
  m.kernel.normalize_per_head = integer("kernel.normalize_per_head") != 0;
  if (!kv.count("strategy")) {
    m.poison.reset();
    return;
  }
  PoisonSpec p;
  p.alter.strategy = parse_strategy(get("strategy"));
  p.alter.rho = num("rho");
  p.alter.seed = static_cast<std::uint64_t>(std::stoull(get("seed")));
  p.gamma = num("gamma");
  p.blend.lambda = num("lambda");
  p.blend.resize_filter = get("resize_filter") == "nearest" ? ResizeFilter::nearest : ResizeFilter::bilinear;
  p.trigger.kind = parse_trigger_kind(get("trigger.kind"));
  p.trigger.seed = static_cast<std::uint64_t>(std::stoull(get("trigger.seed")));
  TriggerParams& t = p.trigger.params;
  t.rain_streaks = static_cast<int>(integer("trigger.rain_streaks"));
  t.rain_angle_deg = num("trigger.rain_angle_deg");
  t.rain_length = static_cast<int>(integer("trigger.rain_length"));
  t.snow_flakes = static_cast<int>(integer("trigger.snow_flakes"));
  t.snow_radius = num("trigger.snow_radius");
  t.light_center_row = num("trigger.light_center_row");
  t.light_center_col = num("trigger.light_center_col");
  t.light_falloff = num("trigger.light_falloff");
  t.light_peak = num("trigger.light_peak");
  t.patch_side = static_cast<int>(integer("trigger.patch_side"));
  t.patch_cell = static_cast<int>(integer("trigger.patch_cell"));
  t.region_height = static_cast<int>(integer("trigger.region_height"));
  t.region_width = static_cast<int>(integer("trigger.region_width"));
  t.custom_path = get("trigger.custom_path");
  m.poison = p;
}

void write_manifest(const DatasetManifest& manifest) {
  write_file_atomic(manifest.root / kSidecarFile, encode_sidecar(manifest));
  write_file_atomic(manifest.root / kManifestFile, encode_manifest(manifest));
}

DatasetManifest read_manifest(const fs::path& root) {
  DatasetManifest m;
  m.root = root;
  try {
    m.samples = decode_manifest(read_file(root / kManifestFile));
    decode_sidecar(read_file(root / kSidecarFile), m);
  } catch (const InvalidInput& e) {
    throw IoError((root / kManifestFile).string(), e.what());
  }
  for (const auto& s : m.samples) {
    for (const std::string* rel : {&s.image_path, &s.points_path, &s.density_path}) {
      if (rel->empty() && rel == &s.density_path) continue;
      if (!fs::exists(root / *rel)) throw IoError((root / *rel).string(), "referenced file does not exist");
    }
  }
  if (m.provenance == Provenance::poisoned && !m.poison)
    throw IoError((root / kSidecarFile).string(), "poisoned manifest without poisoning spec");
  return m;
}

LoadedSample load_sample(const fs::path& root, const SampleRecord& record, const GaussianKernelSpec& kernel) {
  LoadedSample s;
  s.id = record.id;
  s.image = read_image(root / record.image_path);
  s.heads = read_points(root / record.points_path, s.image.height, s.image.width);
  s.density = record.density_path.empty() ? render_density_map(s.heads, kernel)
                                          : read_density(root / record.density_path);
  return s;
}

std::vector<LoadedSample> load_split(const DatasetManifest& manifest, Split which, unsigned workers) {
  const auto records = manifest.split(which);
  std::vector<LoadedSample> out(records.size());
  parallel_for(records.size(), workers,
               [&](std::size_t i) { out[i] = load_sample(manifest.root, *records[i], manifest.kernel); });
  return out;
}

std::vector<std::string> select_poison_subset(const DatasetManifest& manifest, double gamma, std::uint64_t seed) {
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw ConfigError("poisoning rate gamma must lie in [0,1]");
  const auto train = manifest.split(Split::train);
  const auto k = static_cast<std::size_t>(std::llround(gamma * static_cast<double>(train.size())));
  Rng rng(hash64(seed, std::string_view("poison-subset")));
  std::vector<std::string> ids;
  for (std::size_t idx : sample_without_replacement(train.size(), k, rng)) ids.push_back(train[idx]->id);
  return ids;
}

namespace {

void copy_record_files(const SampleRecord& r, const fs::path& in_root, const fs::path& out_root) {
  copy_file_atomic(in_root / r.image_path, out_root / r.image_path);
  copy_file_atomic(in_root / r.points_path, out_root / r.points_path);
  if (!r.density_path.empty()) copy_file_atomic(in_root / r.density_path, out_root / r.density_path);
}

void check_distinct_roots(const fs::path& in_root, const fs::path& out_root) {
  std::error_code ec;
  if (fs::exists(out_root) && fs::equivalent(in_root, out_root, ec))
    throw ConfigError("output root must differ from the input dataset root");
}

}  // namespace

SampleRecord poison_sample(const SampleRecord& record, const fs::path& in_root, const fs::path& out_root,
                           const PoisonSpec& spec, const GaussianKernelSpec& kernel) {
  if (record.split != Split::train) throw InvalidInput("only train samples are poisoned: " + record.id);
  const LoadedSample clean = load_sample(in_root, record, kernel);
  const TriggerPattern trigger = spec.trigger.make(clean.image.height, clean.image.width);

  SampleRecord out = record;
  out.poisoned = true;
  if (out.density_path.empty()) out.density_path = "density/" + record.id + ".dmap";
  write_image(out_root / out.image_path, blend(clean.image, trigger, spec.blend));

  AlterSpec alter_spec = spec.alter;
  alter_spec.seed = hash64(spec.alter.seed, std::string_view(record.id));
  const double original = static_cast<double>(clean.heads.count());

  if (alter_spec.strategy == Strategy::tri_only) {
    copy_file_atomic(in_root / record.points_path, out_root / out.points_path);
    if (!record.density_path.empty())
      copy_file_atomic(in_root / record.density_path, out_root / out.density_path);
    else
      write_density(out_root / out.density_path, clean.density);
    out.achieved_rho = 1.0;
    return out;
  }

  const AlterResult altered = alter(clean.heads, clean.density, alter_spec, kernel);
  write_points(out_root / out.points_path, altered.points);
  write_density(out_root / out.density_path, altered.density);
  if (original == 0.0) {
    out.achieved_rho = 1.0;
  } else if (alter_spec.strategy == Strategy::dmba_plus_plus) {
    const double before = count_from_density(clean.density);
    out.achieved_rho = before > 0.0 ? count_from_density(altered.density) / before : 1.0;
  } else {
    out.achieved_rho = static_cast<double>(altered.points.count()) / original;
  }
  return out;
}

DatasetManifest poison_dataset(const DatasetManifest& manifest, const PoisonSpec& spec, const fs::path& out_root,
                               unsigned workers) {
  spec.validate();
  check_distinct_roots(manifest.root, out_root);
  const auto selected_ids = select_poison_subset(manifest, spec.gamma, spec.alter.seed);
  const std::set<std::string> selected(selected_ids.begin(), selected_ids.end());

  DatasetManifest out;
  out.name = out_root.filename().empty() ? out_root.parent_path().filename().string() : out_root.filename().string();
  out.kernel = manifest.kernel;
  out.provenance = Provenance::poisoned;
  out.poison = spec;
  out.root = out_root;
  out.samples.resize(manifest.samples.size());
  parallel_for(manifest.samples.size(), workers, [&](std::size_t i) {
    const SampleRecord& rec = manifest.samples[i];
    if (selected.count(rec.id)) {
      out.samples[i] = poison_sample(rec, manifest.root, out_root, spec, manifest.kernel);
    } else {
      copy_record_files(rec, manifest.root, out_root);
      SampleRecord copy = rec;
      copy.poisoned = false;
      copy.achieved_rho.reset();
      out.samples[i] = std::move(copy);
    }
  });
  fs::create_directories(out_root);
  write_manifest(out);
  return out;
}

DatasetManifest trigger_test_set(const DatasetManifest& manifest, const TriggerSpec& trigger, const BlendSpec& blend_spec,
                                 const fs::path& out_root, unsigned workers) {
  blend_spec.validate();
  check_distinct_roots(manifest.root, out_root);
  const auto tests = manifest.split(Split::test);
  if (tests.empty()) throw InvalidInput("manifest has no test split");

  DatasetManifest out;
  out.name = out_root.filename().empty() ? out_root.parent_path().filename().string() : out_root.filename().string();
  out.kernel = manifest.kernel;
  out.provenance = Provenance::triggered;
  PoisonSpec spec;
  spec.alter.strategy = Strategy::tri_only;
  spec.alter.rho = 1.0;
  spec.gamma = 0.0;
  spec.trigger = trigger;
  spec.blend = blend_spec;
  out.poison = spec;
  out.root = out_root;
  out.samples.resize(tests.size());
  parallel_for(tests.size(), workers, [&](std::size_t i) {
    const SampleRecord& rec = *tests[i];
    const GrayImage image = read_image(manifest.root / rec.image_path);
    const TriggerPattern pattern = trigger.make(image.height, image.width);
    write_image(out_root / rec.image_path, blend(image, pattern, blend_spec));
    copy_file_atomic(manifest.root / rec.points_path, out_root / rec.points_path);
    if (!rec.density_path.empty())
      copy_file_atomic(manifest.root / rec.density_path, out_root / rec.density_path);
    SampleRecord copy = rec;
    copy.poisoned = false;
    copy.achieved_rho.reset();
    out.samples[i] = std::move(copy);
  });
  fs::create_directories(out_root);
  write_manifest(out);
  return out;
}

}  // namespace densforge
