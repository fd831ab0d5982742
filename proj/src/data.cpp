#include "condisr/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "condisr/image_io.hpp"

namespace fs = std::filesystem;

namespace condisr {
namespace {

constexpr int kS = kImageSide;

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

/// Distance from a point to the central kCenterSide x kCenterSide square.
double center_box_distance(double x, double y) {
  double lo = (kS - kCenterSide) / 2.0;
  double hi = lo + kCenterSide;
  double dx = std::max({lo - x, 0.0, x - hi});
  double dy = std::max({lo - y, 0.0, y - hi});
  return std::sqrt(dx * dx + dy * dy);
}

struct Lesion {
  bool present = false;
  double cx = 0, cy = 0, radius = 0, period = 2.5;
};

/// Grayscale structure field plus lesion geometry; all draws come from the
/// structure stream only.
void generate_structure(Rng& rng, const SyntheticDomainConfig& cfg, std::vector<double>& field,
                        Lesion& lesion, int& label) {
  field.assign(kS * kS, 0.55);
  int blobs = cfg.blob_count_min +
              static_cast<int>(rng.bounded(
                  static_cast<std::uint32_t>(cfg.blob_count_max - cfg.blob_count_min + 1)));
  for (int b = 0; b < blobs; ++b) {
    double cx = rng.uniform(0, kS), cy = rng.uniform(0, kS);
    double sigma = rng.uniform(cfg.blob_sigma_min, cfg.blob_sigma_max);
    double amp = rng.uniform(-0.18, 0.18);
    double inv2s2 = 1.0 / (2.0 * sigma * sigma);
    for (int y = 0; y < kS; ++y)
      for (int x = 0; x < kS; ++x) {
        double d2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
        field[y * kS + x] += amp * std::exp(-d2 * inv2s2);
      }
  }
  double gx = rng.uniform(-0.08, 0.08), gy = rng.uniform(-0.08, 0.08);
  for (int y = 0; y < kS; ++y)
    for (int x = 0; x < kS; ++x)
      field[y * kS + x] += gx * (x / double(kS) - 0.5) + gy * (y / double(kS) - 0.5);

  int speckles = cfg.speckle_min +
                 static_cast<int>(rng.bounded(
                     static_cast<std::uint32_t>(cfg.speckle_max - cfg.speckle_min + 1)));
  for (int sp = 0; sp < speckles; ++sp) {
    double cx = rng.uniform(0, kS), cy = rng.uniform(0, kS);
    double r = rng.uniform(1.0, 2.5);
    double depth = rng.uniform(0.08, 0.30);
    int x0 = std::max(0, static_cast<int>(cx - r - 1)), x1 = std::min(kS - 1, static_cast<int>(cx + r + 1));
    int y0 = std::max(0, static_cast<int>(cy - r - 1)), y1 = std::min(kS - 1, static_cast<int>(cy + r + 1));
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) {
        double d2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
        double w = 1.0 - d2 / (r * r);
        if (w > 0) field[y * kS + x] -= depth * w;
      }
  }

  // Lesion placement defines the label: positives intersect the central
  // window, negatives either have no lesion or one safely away from it.
  label = rng.bernoulli(0.5) ? 1 : 0;
  lesion.present = label == 1 || rng.bernoulli(cfg.off_center_lesion_prob);
  if (lesion.present) {
    lesion.radius = rng.uniform(cfg.lesion_radius_min, cfg.lesion_radius_max);
    lesion.period = rng.uniform(cfg.lesion_period_min, cfg.lesion_period_max);
    for (;;) {
      lesion.cx = rng.uniform(4.0, kS - 4.0);
      lesion.cy = rng.uniform(4.0, kS - 4.0);
      double d = center_box_distance(lesion.cx, lesion.cy);
      if (label == 1 && d <= lesion.radius) break;
      if (label == 0 && d >= lesion.radius + 4.0) break;
    }
    for (int y = 0; y < kS; ++y)
      for (int x = 0; x < kS; ++x) {
        double d2 = (x - lesion.cx) * (x - lesion.cx) + (y - lesion.cy) * (y - lesion.cy);
        double t = std::sqrt(d2) / lesion.radius;
        if (t >= 1.0) continue;
        int parity = (static_cast<int>(std::floor(x / lesion.period)) +
                      static_cast<int>(std::floor(y / lesion.period))) & 1;
        double checker = parity ? 0.92 : 0.08;
        double w = 0.85 * (1.0 - t * t);
        field[y * kS + x] = field[y * kS + x] * (1.0 - w) + checker * w;
      }
  }
  for (double& v : field) v = std::clamp(v, 0.02, 0.98);
}

/// Fixed channel curves so the per-domain mixing matrix acts on genuine
/// channel structure rather than a pure gray axis.
void colorize(const std::vector<double>& field, std::vector<double>& rgb) {
  rgb.resize(3 * kS * kS);
  for (int i = 0; i < kS * kS; ++i) {
    double v = field[i];
    rgb[0 * kS * kS + i] = 0.92 * v + 0.08 * v * v;
    rgb[1 * kS * kS + i] = v;
    rgb[2 * kS * kS + i] = 0.85 * v + 0.15 * std::sqrt(v);
  }
}

void apply_style(const DomainStyle& style, const SyntheticDomainConfig& cfg, Rng& style_rng,
                 std::vector<double>& rgb, std::vector<std::uint8_t>& out) {
  double gamma = style.gamma * std::exp(style_rng.uniform(-cfg.jitter_gamma, cfg.jitter_gamma));
  double contrast =
      style.contrast * (1.0 + style_rng.uniform(-cfg.jitter_contrast, cfg.jitter_contrast));
  std::array<double, 3> tint;
  for (int k = 0; k < 3; ++k)
    tint[k] = style.tint[k] + style_rng.uniform(-cfg.jitter_tint, cfg.jitter_tint);
  out.resize(3 * kS * kS);
  for (int i = 0; i < kS * kS; ++i) {
    double in[3] = {rgb[i], rgb[kS * kS + i], rgb[2 * kS * kS + i]};
    for (int k = 0; k < 3; ++k) {
      double v = style.mix[3 * k] * in[0] + style.mix[3 * k + 1] * in[1] +
                 style.mix[3 * k + 2] * in[2];
      v = (v - 0.5) * contrast + 0.5;
      v = std::pow(clamp01(v), gamma);
      v = clamp01(v + tint[k]);
      out[k * kS * kS + i] = static_cast<std::uint8_t>(std::lround(v * 255.0));
    }
  }
}

std::string center_name(int d) { return "C" + std::to_string(d); }

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(item);
  if (!line.empty() && line.back() == ',') out.push_back("");
  return out;
}

}  // namespace

std::vector<DomainStyle> default_domain_styles() {
  std::vector<DomainStyle> s(5);
  s[0] = {{1.00, 0.00, 0.00, 0.00, 1.00, 0.00, 0.00, 0.00, 1.00}, 1.00, 1.00, {0.00, 0.00, 0.00}};
  s[1] = {{1.10, 0.08, 0.00, 0.04, 0.92, 0.04, 0.00, 0.06, 0.72}, 0.60, 1.20, {0.07, 0.01, -0.06}};
  s[2] = {{0.70, 0.05, 0.10, 0.05, 0.90, 0.05, 0.08, 0.05, 1.12}, 1.70, 0.90, {-0.06, 0.00, 0.09}};
  s[3] = {{0.85, 0.10, 0.00, 0.10, 1.08, 0.06, 0.00, 0.10, 0.85}, 0.85, 0.75, {-0.02, 0.07, -0.02}};
  s[4] = {{1.05, 0.00, 0.10, 0.00, 0.85, 0.05, 0.10, 0.00, 0.95}, 1.35, 1.35, {-0.04, -0.06, -0.01}};
  return s;
}

double style_distance(const DomainStyle& a, const DomainStyle& b) {
  double d = 0.0;
  for (int i = 0; i < 9; ++i) d += (a.mix[i] - b.mix[i]) * (a.mix[i] - b.mix[i]);
  d = std::sqrt(d);
  d += std::abs(std::log(a.gamma) - std::log(b.gamma));
  d += std::abs(a.contrast - b.contrast);
  for (int i = 0; i < 3; ++i) d += std::abs(a.tint[i] - b.tint[i]);
  return d;
}

std::vector<DomainDataset> generate_synthetic_domains(const SyntheticDomainConfig& cfg_in,
                                                      std::uint64_t seed) {
  SyntheticDomainConfig cfg = cfg_in;
  if (cfg.samples_per_domain < 10)
    throw DataError("synthetic: samples_per_domain must be >= 10");
  if (cfg.styles.empty()) cfg.styles = default_domain_styles();
  if (static_cast<int>(cfg.styles.size()) < cfg.n_domains)
    throw DataError("synthetic: need one style per domain");
  for (int d = 0; d < cfg.n_domains; ++d) {
    const auto& m = cfg.styles[d].mix;
    double det = m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) +
                 m[2] * (m[3] * m[7] - m[4] * m[6]);
    if (std::abs(det) < 1e-6)
      throw DataError("synthetic: singular color matrix for domain " + std::to_string(d));
  }
  for (int i = 0; i < cfg.n_domains; ++i)
    for (int j = i + 1; j < cfg.n_domains; ++j)
      if (style_distance(cfg.styles[i], cfg.styles[j]) < cfg.min_style_distance)
        throw DataError("synthetic: styles of domains " + std::to_string(i) + " and " +
                        std::to_string(j) + " are closer than the minimum style distance");

  std::vector<DomainDataset> out(cfg.n_domains);
  std::vector<double> field, rgb;
  for (int d = 0; d < cfg.n_domains; ++d) {
    out[d].name = center_name(d);
    out[d].domain_id = d;
    out[d].samples.resize(cfg.samples_per_domain);
    for (int i = 0; i < cfg.samples_per_domain; ++i) {
      Rng struct_rng = Rng::derive(seed, {2001, static_cast<std::uint64_t>(d),
                                          static_cast<std::uint64_t>(i)});
      Rng style_rng = Rng::derive(seed, {2002, static_cast<std::uint64_t>(d),
                                         static_cast<std::uint64_t>(i)});
      Lesion lesion;
      int label = 0;
      generate_structure(struct_rng, cfg, field, lesion, label);
      colorize(field, rgb);
      DomainSample& s = out[d].samples[i];
      apply_style(cfg.styles[d], cfg, style_rng, rgb, s.pixels);
      s.label = label;
      s.domain_id = d;
      s.sample_id = static_cast<long>(d) * cfg.samples_per_domain + i;
    }
  }
  return out;
}

std::vector<DomainDataset> load_camelyon17(const std::string& root) {
  fs::path meta_path = fs::path(root) / "metadata.csv";
  std::ifstream is(meta_path);
  if (!is) throw DataError("missing metadata file: " + meta_path.string());
  std::string line;
  if (!std::getline(is, line)) throw DataError("empty metadata file: " + meta_path.string());
  std::vector<std::string> header = split_csv_line(line);
  std::map<std::string, int> col;
  for (std::size_t i = 0; i < header.size(); ++i) col[header[i]] = static_cast<int>(i);
  for (const char* required : {"patient", "node", "x_coord", "y_coord", "tumor", "center"})
    if (!col.count(required))
      throw DataError(std::string("metadata is missing column '") + required + "'");

  std::vector<DomainDataset> out(5);
  for (int d = 0; d < 5; ++d) {
    out[d].name = center_name(d);
    out[d].domain_id = d;
  }
  long row_index = 0;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<std::string> fields = split_csv_line(line);
    auto get = [&](const char* name) -> const std::string& {
      int idx = col.at(name);
      if (idx >= static_cast<int>(fields.size()))
        throw DataError("metadata row " + std::to_string(row_index + 1) + " is truncated");
      return fields[static_cast<std::size_t>(idx)];
    };
    int patient = std::stoi(get("patient"));
    int node = std::stoi(get("node"));
    long x = std::stol(get("x_coord"));
    long y = std::stol(get("y_coord"));
    int tumor = std::stoi(get("tumor"));
    int center = std::stoi(get("center"));
    if (center < 0 || center > 4)
      throw DataError("metadata row " + std::to_string(row_index + 1) + ": unknown center " +
                      std::to_string(center));
    if (tumor != 0 && tumor != 1)
      throw DataError("metadata row " + std::to_string(row_index + 1) + ": tumor label must be 0/1");
    char dir_buf[64], file_buf[96];
    std::snprintf(dir_buf, sizeof dir_buf, "patient_%03d_node_%d", patient, node);
    std::snprintf(file_buf, sizeof file_buf, "patch_patient_%03d_node_%d_x_%ld_y_%ld.png", patient,
                  node, x, y);
    fs::path img_path = fs::path(root) / "patches" / dir_buf / file_buf;
    if (!fs::exists(img_path)) throw DataError("missing patch file: " + img_path.string());
    ImageU8 img = read_png(img_path.string());
    if (img.width != kImageSide || img.height != kImageSide)
      throw DataError("patch is not 96x96: " + img_path.string());
    DomainSample s;
    s.pixels.resize(3 * kS * kS);
    for (int yy = 0; yy < kS; ++yy)
      for (int xx = 0; xx < kS; ++xx)
        for (int ch = 0; ch < 3; ++ch)
          s.pixels[static_cast<std::size_t>(ch) * kS * kS + yy * kS + xx] =
              img.pixels[(static_cast<std::size_t>(yy) * kS + xx) * 3 + ch];
    s.label = tumor;
    s.domain_id = center;
    s.sample_id = row_index;
    out[static_cast<std::size_t>(center)].samples.push_back(std::move(s));
    ++row_index;
  }
  return out;
}

void export_wilds_layout(const std::vector<DomainDataset>& datasets, const std::string& out_dir) {
  fs::create_directories(out_dir);
  std::ofstream meta(fs::path(out_dir) / "metadata.csv");
  if (!meta) throw DataError("cannot write metadata.csv under " + out_dir);
  meta << "patient,node,x_coord,y_coord,tumor,slide,center,split\n";
  for (const auto& ds : datasets) {
    char dir_buf[64];
    std::snprintf(dir_buf, sizeof dir_buf, "patient_%03d_node_0", ds.domain_id);
    fs::path dir = fs::path(out_dir) / "patches" / dir_buf;
    fs::create_directories(dir);
    for (const auto& s : ds.samples) {
      meta << ds.domain_id << ",0," << s.sample_id << ",0," << s.label << ",0," << ds.domain_id
           << ",0\n";
      ImageU8 img;
      img.width = kS;
      img.height = kS;
      img.pixels.resize(3 * kS * kS);
      for (int yy = 0; yy < kS; ++yy)
        for (int xx = 0; xx < kS; ++xx)
          for (int ch = 0; ch < 3; ++ch)
            img.pixels[(static_cast<std::size_t>(yy) * kS + xx) * 3 + ch] =
                s.pixels[static_cast<std::size_t>(ch) * kS * kS + yy * kS + xx];
      char file_buf[96];
      std::snprintf(file_buf, sizeof file_buf, "patch_patient_%03d_node_0_x_%ld_y_0.png",
                    ds.domain_id, s.sample_id);
      write_png((dir / file_buf).string(), img);
    }
  }
}

std::pair<DomainDataset, DomainDataset> holdout_split(const DomainDataset& ds, double fraction,
                                                      std::uint64_t seed) {
  if (fraction <= 0.0 || fraction >= 1.0)
    throw DataError("holdout_split: fraction must lie strictly between 0 and 1");
  long n = static_cast<long>(ds.size());
  long n_val = std::lround(fraction * static_cast<double>(n));
  if (n_val == 0 || n_val == n)
    throw DataError("holdout_split: split would leave one side empty");
  Rng rng = Rng::derive(seed, {3001, static_cast<std::uint64_t>(ds.domain_id)});
  std::vector<int> idx = rng.permutation(static_cast<int>(n));
  std::vector<int> val_idx(idx.begin(), idx.begin() + n_val);
  std::vector<int> train_idx(idx.begin() + n_val, idx.end());
  std::sort(val_idx.begin(), val_idx.end());
  std::sort(train_idx.begin(), train_idx.end());
  DomainDataset train{ds.name, ds.domain_id, {}}, val{ds.name, ds.domain_id, {}};
  train.samples.reserve(train_idx.size());
  val.samples.reserve(val_idx.size());
  for (int i : train_idx) train.samples.push_back(ds.samples[static_cast<std::size_t>(i)]);
  for (int i : val_idx) val.samples.push_back(ds.samples[static_cast<std::size_t>(i)]);
  return {std::move(train), std::move(val)};
}

EvalCollection union_domains(const std::vector<const DomainDataset*>& datasets) {
  if (datasets.empty()) throw DataError("union_domains: empty dataset list");
  EvalCollection out;
  std::set<long> seen;
  for (const DomainDataset* ds : datasets)
    for (const DomainSample& s : ds->samples) {
      if (!seen.insert(s.sample_id).second)
        throw DataError("union_domains: duplicate sample id " + std::to_string(s.sample_id));
      out.samples.push_back(&s);
    }
  return out;
}

}  // namespace condisr
