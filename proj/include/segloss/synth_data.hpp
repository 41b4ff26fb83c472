#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "segloss/image.hpp"
#include "segloss/rng.hpp"

namespace segloss {

// Seeded synthetic lesion images: smooth value-noise background plus, for
// lesion samples, 1-3 soft-edged elliptical blobs. The mask is the blob
// support before blurring, thresholded at half of the unit profile height.
std::vector<Sample> generate_dataset(int n_lesion, int n_clean, int height,
                                     int width, uint64_t seed);

// Binary PGM (P5, maxval 255). Images are quantized to round(v*255); masks
// are stored as {0, 255} and round-trip exactly.
void write_pgm(const Image& image, const std::filesystem::path& path);
void write_pgm(const Mask& mask, const std::filesystem::path& path);
Image read_pgm_image(const std::filesystem::path& path);
Mask read_pgm_mask(const std::filesystem::path& path);

struct ManifestRow {
  std::string id;
  std::string image_path;  // relative to the manifest's directory
  std::string mask_path;
  bool has_lesion = false;
};

// CSV with header: id,image_path,mask_path,has_lesion
void write_manifest(const std::vector<ManifestRow>& rows,
                    const std::filesystem::path& path);
std::vector<ManifestRow> read_manifest(const std::filesystem::path& path);

// Writes images/, masks/ and manifest.csv under dir.
void write_dataset(const std::vector<Sample>& samples,
                   const std::filesystem::path& dir);
// Loads every manifest row; verifies that mask content matches has_lesion.
std::vector<Sample> load_dataset(const std::filesystem::path& manifest_path);

struct FoldSplit {
  int k = 0;
  std::map<std::string, int> fold_of;

  std::vector<std::string> ids_in_fold(int fold) const;
  std::vector<std::string> ids_not_in_fold(int fold) const;
};

// Seeded shuffle then round-robin assignment; fold sizes differ by at most
// one. Fold i serves as the validation set of run i.
FoldSplit make_folds(const std::vector<std::string>& ids, int k, uint64_t seed);

// Training-time augmentation: independent h/v flips (p=0.5 each), rotation
// by k*90 degrees (square images; 180 only otherwise), brightness offset
// U(-0.1, 0.1) clamped to [0,1]. The mask gets the identical geometric
// transform and stays binary; has_lesion is re-derived.
Sample augment(const Sample& sample, Rng& rng);

}  // namespace segloss
