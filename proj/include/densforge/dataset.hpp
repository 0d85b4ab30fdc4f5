#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "densforge/altering.hpp"
#include "densforge/density.hpp"
#include "densforge/image.hpp"
#include "densforge/trigger.hpp"

namespace densforge {

enum class Split { train, test };

std::string to_string(Split split);
Split parse_split(const std::string& name);

struct SampleRecord {
  std::string id;
  Split split = Split::train;
  bool poisoned = false;
  // Relative to the manifest root. density_path may be empty (rendered on demand).
  std::string image_path;
  std::string points_path;
  std::string density_path;
  std::optional<double> achieved_rho;

  bool operator==(const SampleRecord&) const = default;
};

struct PoisonSpec {
  AlterSpec alter;
  double gamma = 0.2;
  TriggerSpec trigger;
  BlendSpec blend;

  void validate() const;
};

enum class Provenance { clean, poisoned, triggered };

struct DatasetManifest {
  std::string name;
  std::vector<SampleRecord> samples;
  GaussianKernelSpec kernel;
  Provenance provenance = Provenance::clean;
  std::optional<PoisonSpec> poison;  // set for poisoned and triggered manifests
  std::filesystem::path root;

  std::vector<const SampleRecord*> split(Split which) const;
  const SampleRecord* find(const std::string& id) const;
};

inline constexpr const char* kManifestFile = "manifest.tsv";
inline constexpr const char* kSidecarFile = "manifest.meta";

// Tab-separated manifest text (header "DENSFORGE-MANIFEST v1").
std::string encode_manifest(const DatasetManifest& manifest);
std::vector<SampleRecord> decode_manifest(const std::string& text);

// key=value sidecar with the name, kernel and poisoning configuration.
std::string encode_sidecar(const DatasetManifest& manifest);
void decode_sidecar(const std::string& text, DatasetManifest& manifest);

void write_manifest(const DatasetManifest& manifest);
// Reads root/manifest.tsv and its sidecar; every referenced file must exist.
DatasetManifest read_manifest(const std::filesystem::path& root);

struct LoadedSample {
  std::string id;
  GrayImage image;
  HeadPointSet heads;
  DensityMap density;
};

// Loads a record from `root`; renders the density map when the record has none.
LoadedSample load_sample(const std::filesystem::path& root, const SampleRecord& record,
                         const GaussianKernelSpec& kernel);
std::vector<LoadedSample> load_split(const DatasetManifest& manifest, Split which, unsigned workers = 1);

std::vector<std::string> select_poison_subset(const DatasetManifest& manifest, double gamma,
                                              std::uint64_t seed);

// Blends the trigger, alters the ground truth and writes the poisoned files under out_root.
SampleRecord poison_sample(const SampleRecord& record, const std::filesystem::path& in_root,
                           const std::filesystem::path& out_root, const PoisonSpec& spec,
                           const GaussianKernelSpec& kernel);

// New dataset under out_root: the selected train samples poisoned, everything else copied.
DatasetManifest poison_dataset(const DatasetManifest& manifest, const PoisonSpec& spec,
                               const std::filesystem::path& out_root, unsigned workers = 1);

// Test split only, every image blended with the trigger, ground truth copied unchanged.
DatasetManifest trigger_test_set(const DatasetManifest& manifest, const TriggerSpec& trigger,
                                 const BlendSpec& blend, const std::filesystem::path& out_root,
                                 unsigned workers = 1);

}  // namespace densforge
