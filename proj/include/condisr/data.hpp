#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "condisr/errors.hpp"
#include "condisr/rng.hpp"
#include "condisr/tensor.hpp"

// Domain-labeled datasets: a procedural synthetic benchmark with five
// styled domains, a WILDS-layout loader (metadata CSV + PNG patches), and
// the split machinery for the leave-one-domain-in protocol.

namespace condisr {

inline constexpr int kImageSide = 96;
inline constexpr int kImageChannels = 3;
inline constexpr int kCenterSide = 32;  // labels refer to the central window

struct DomainSample {
  std::vector<std::uint8_t> pixels;  // CHW, 3*96*96
  int label = 0;
  int domain_id = 0;
  long sample_id = 0;

  /// Image as reals in [0,1], shape (3,96,96).
  Tensor<double> image() const {
    Tensor<double> t({kImageChannels, kImageSide, kImageSide});
    for (long i = 0; i < t.numel(); ++i)
      t[i] = pixels[static_cast<std::size_t>(i)] / 255.0;
    return t;
  }
};

struct DomainDataset {
  std::string name;  // e.g. "C0"
  int domain_id = 0;
  std::vector<DomainSample> samples;

  std::size_t size() const { return samples.size(); }
};

/// Union of datasets for target-domain evaluation; keeps original domain
/// ids for per-domain diagnostics. Non-owning.
struct EvalCollection {
  std::vector<const DomainSample*> samples;
};

// ---------------------------------------------------------------------------
// Synthetic benchmark
// ---------------------------------------------------------------------------

struct DomainStyle {
  std::array<double, 9> mix{1, 0, 0, 0, 1, 0, 0, 0, 1};  // row-major 3x3
  double gamma = 1.0;
  double contrast = 1.0;
  std::array<double, 3> tint{0, 0, 0};
};

struct SyntheticDomainConfig {
  int n_domains = 5;
  int samples_per_domain = 1000;

  // structure spec
  int blob_count_min = 6, blob_count_max = 10;
  double blob_sigma_min = 8.0, blob_sigma_max = 26.0;
  int speckle_min = 40, speckle_max = 80;
  double lesion_radius_min = 7.0, lesion_radius_max = 12.0;
  double lesion_period_min = 2.0, lesion_period_max = 3.0;
  double off_center_lesion_prob = 0.2;  // among negatives

  // per-sample style jitter
  double jitter_gamma = 0.15;
  double jitter_contrast = 0.10;
  double jitter_tint = 0.04;

  // domains must be genuinely shifted; distance is
  // ||M_i-M_j||_F + |log g_i - log g_j| + |c_i - c_j| + ||t_i - t_j||_1
  double min_style_distance = 0.3;

  std::vector<DomainStyle> styles;  // defaults filled when empty
};

std::vector<DomainStyle> default_domain_styles();
double style_distance(const DomainStyle& a, const DomainStyle& b);

/// Procedural textures with a high-frequency "lesion" pattern; label = 1 iff
/// the pattern intersects the central 32x32 window. Structure and labels are
/// drawn from streams independent of the style values, so restyling a domain
/// never changes its labels.
std::vector<DomainDataset> generate_synthetic_domains(const SyntheticDomainConfig& cfg,
                                                      std::uint64_t seed);

// ---------------------------------------------------------------------------
// WILDS-layout loader and writer
// ---------------------------------------------------------------------------

/// Expects root/metadata.csv with (at least) columns patient, node, x_coord,
/// y_coord, tumor, center and patches under
/// root/patches/patient_XXX_node_N/patch_patient_XXX_node_N_x_X_y_Y.png.
/// Returns five datasets keyed by center 0..4.
std::vector<DomainDataset> load_camelyon17(const std::string& root);

/// Writes datasets in the same layout (metadata.csv + PNG patches) so both
/// sources flow through load_camelyon17.
void export_wilds_layout(const std::vector<DomainDataset>& datasets, const std::string& out_dir);

// ---------------------------------------------------------------------------
// Protocol splits
// ---------------------------------------------------------------------------

/// Seeded shuffle split; val gets round(fraction*N) samples. Deterministic
/// per (seed, domain_id) via the PCG32 stream derivation.
std::pair<DomainDataset, DomainDataset> holdout_split(const DomainDataset& ds, double fraction,
                                                      std::uint64_t seed);

EvalCollection union_domains(const std::vector<const DomainDataset*>& datasets);

}  // namespace condisr
