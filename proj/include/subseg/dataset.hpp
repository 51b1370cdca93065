#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "subseg/hierarchy.hpp"
#include "subseg/rng.hpp"
#include "subseg/tensor.hpp"
#include "subseg/tsr1.hpp"

namespace subseg {

struct GenSpec {
  int height = 64;
  int width = 64;
  int channels = 1;
  int k_fg = 3;  // foreground subclasses, nested rings per object
  float noise_sigma = 0.05f;
  int min_objects = 1;
  int max_objects = 3;
  // Subclass means are separated by ring_gap but every object carries a
  // random brightness offset of up to object_jitter, so absolute intensity
  // alone cannot identify a subclass across objects; ring order can. Ring
  // widths are drawn per object, so radial position alone is not enough
  // either.
  float ring_gap = 0.08f;
  float object_jitter = 0.16f;
  // Ring-free blobs in the foreground intensity band, labeled background.
  // Telling them from real objects is what the abundant superclass labels
  // teach; intensity alone cannot.
  int min_distractors = 1;
  int max_distractors = 3;

  HierarchySpec hierarchy() const { return HierarchySpec::binary_foreground(k_fg); }
};

/// Image with its superclass map and, when annotated, its subclass map.
struct Sample {
  Tensor image;  // C x H x W in [0,1]
  LabelMap y;
  std::optional<LabelMap> z;
  uint64_t seed = 0;
};

struct DatasetSplit {
  HierarchySpec hierarchy;
  std::vector<Sample> fine;    // with z
  std::vector<Sample> coarse;  // z stripped
  std::vector<Sample> val;
  std::vector<Sample> test;
  // Oracle subclass labels of the coarse set, parallel to `coarse`.
  // Diagnostics only; training code paths must not read these.
  std::vector<LabelMap> coarse_oracle;
};

namespace detail {

struct Blob {
  double cx, cy;      // center
  double r;           // base radius
  double aspect;      // axis ratio
  double angle;       // orientation
  double wobble_amp;  // boundary modulation
  double wobble_phase;
  double wobble_amp2;
  double wobble_phase2;
  double brightness;             // per-object intensity offset
  std::vector<double> ring_edges;  // ascending interior boundaries in rho

  // Normalized radial coordinate: <= 1 inside the blob.
  double rho(double px, double py) const {
    const double dx = px - cx, dy = py - cy;
    const double ca = std::cos(angle), sa = std::sin(angle);
    const double u = ca * dx + sa * dy;
    const double v = -sa * dx + ca * dy;
    const double phi = std::atan2(v, u);
    const double boundary = 1.0 + wobble_amp * std::sin(3.0 * phi + wobble_phase) +
                            wobble_amp2 * std::sin(5.0 * phi + wobble_phase2);
    const double a = r * aspect, b = r / aspect;
    return std::sqrt((u / a) * (u / a) + (v / b) * (v / b)) / boundary;
  }
};

}  // namespace detail

/// Renders 1..3 non-overlapping blobs of nested foreground rings, one ring
/// per subclass (innermost ring = highest subclass index), with distinct
/// mean intensities plus Gaussian noise, clamped to [0,1]. Pure function of
/// (seed, spec).
inline Sample generate_sample(uint64_t seed, const GenSpec& spec) {
  Rng rng(seed, rng_stream::kSample);
  const int H = spec.height, W = spec.width;
  const int n_obj =
      spec.min_objects + static_cast<int>(rng.below(static_cast<uint64_t>(spec.max_objects - spec.min_objects + 1)));

  std::vector<detail::Blob> blobs;
  const double r_hi = std::max(6.5, 14.0 - 2.5 * (n_obj - 1));
  for (int i = 0; i < n_obj; ++i) {
    bool placed = false;
    for (int attempt = 0; attempt < 200 && !placed; ++attempt) {
      detail::Blob b;
      b.r = rng.uniform(5.5, r_hi);
      const double margin = b.r * 1.4 + 1.0;
      if (2.0 * margin >= std::min(H, W)) continue;
      b.cx = rng.uniform(margin, W - margin);
      b.cy = rng.uniform(margin, H - margin);
      b.aspect = rng.uniform(0.65, 1.5);
      b.angle = rng.uniform(0.0, 3.141592653589793);
      b.wobble_amp = rng.uniform(0.03, 0.22);
      b.wobble_phase = rng.uniform(0.0, 6.283185307179586);
      b.wobble_amp2 = rng.uniform(0.0, 0.10);
      b.wobble_phase2 = rng.uniform(0.0, 6.283185307179586);
      b.brightness = rng.uniform(-spec.object_jitter, spec.object_jitter);
      // Relative ring widths in [0.7, 1.5], normalized; cumulative interior
      // edges, innermost ring first.
      {
        std::vector<double> widths(static_cast<size_t>(spec.k_fg));
        double total = 0.0;
        for (auto& wgt : widths) {
          wgt = rng.uniform(0.7, 1.5);
          total += wgt;
        }
        double acc = 0.0;
        b.ring_edges.clear();
        for (int ri = 0; ri + 1 < spec.k_fg; ++ri) {
          acc += widths[static_cast<size_t>(ri)] / total;
          b.ring_edges.push_back(acc);
        }
      }
      bool clash = false;
      for (const auto& other : blobs) {
        const double d = std::hypot(b.cx - other.cx, b.cy - other.cy);
        if (d < 1.4 * (b.r + other.r) + 2.0) clash = true;
      }
      if (!clash) {
        blobs.push_back(b);
        placed = true;
      }
    }
    if (!placed)
      throw std::runtime_error("generate_sample: could not place object for seed " +
                               std::to_string(seed));
  }

  const int n_real = static_cast<int>(blobs.size());
  const int n_dis =
      spec.min_distractors +
      static_cast<int>(rng.below(static_cast<uint64_t>(spec.max_distractors - spec.min_distractors + 1)));
  for (int i = 0; i < n_dis; ++i) {
    bool placed = false;
    for (int attempt = 0; attempt < 200 && !placed; ++attempt) {
      detail::Blob b;
      b.r = rng.uniform(4.5, 9.0);
      const double margin = b.r * 1.4 + 1.0;
      if (2.0 * margin >= std::min(H, W)) continue;
      b.cx = rng.uniform(margin, W - margin);
      b.cy = rng.uniform(margin, H - margin);
      b.aspect = rng.uniform(0.65, 1.5);
      b.angle = rng.uniform(0.0, 3.141592653589793);
      b.wobble_amp = rng.uniform(0.03, 0.22);
      b.wobble_phase = rng.uniform(0.0, 6.283185307179586);
      b.wobble_amp2 = rng.uniform(0.0, 0.10);
      b.wobble_phase2 = rng.uniform(0.0, 6.283185307179586);
      b.brightness = rng.uniform(0.40, 0.84);  // absolute flat mean, fg band
      bool clash = false;
      for (const auto& other : blobs) {
        const double d = std::hypot(b.cx - other.cx, b.cy - other.cy);
        if (d < 1.4 * (b.r + other.r) + 2.0) clash = true;
      }
      if (!clash) {
        blobs.push_back(b);
        placed = true;
      }
    }
    // Crowded layouts simply get fewer distractors.
    if (!placed) break;
  }

  Sample s;
  s.seed = seed;
  LabelMap z(H, W, 0);
  LabelMap owner(H, W, -1);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      for (size_t bi = 0; bi < blobs.size(); ++bi) {
        const double rho = blobs[bi].rho(x + 0.5, y + 0.5);
        if (rho < 1.0) {
          if (static_cast<int>(bi) < n_real) {
            // Innermost ring is subclass k_fg, outermost is subclass 1.
            int ring = 0;
            for (double e : blobs[bi].ring_edges)
              if (rho >= e) ++ring;
            z.at(y, x) = spec.k_fg - ring;
          }
          owner.at(y, x) = static_cast<int32_t>(bi);
          break;
        }
      }
    }

  const auto hier = spec.hierarchy();
  s.y = hier.collapse(z);
  s.z = std::move(z);

  // Ring means sit ring_gap apart around a common center; the per-object
  // offset makes absolute intensity ambiguous across objects while the
  // within-object ordering stays informative. Background keeps a wide gap
  // to every foreground value.
  s.image = Tensor({spec.channels, H, W});
  for (int c = 0; c < spec.channels; ++c)
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        const int32_t cls = s.z->at(y, x);
        const int32_t own = owner.at(y, x);
        double mu = 0.10;
        if (cls > 0) {
          const double center = 0.64;
          mu = center + spec.ring_gap * (static_cast<double>(cls - 1) - 0.5 * (spec.k_fg - 1)) +
               blobs[static_cast<size_t>(own)].brightness;
        } else if (own >= n_real) {
          mu = blobs[static_cast<size_t>(own)].brightness;  // flat distractor
        }
        double v = mu + spec.noise_sigma * rng.normal();
        v = std::clamp(v, 0.0, 1.0);
        s.image[(static_cast<int64_t>(c) * H + y) * W + x] = static_cast<float>(v);
      }
  return s;
}

/// (v - min) / (max - min); a constant image maps to all zeros.
inline Tensor normalize_intensity(const Tensor& image) {
  if (!image.all_finite())
    throw std::invalid_argument("normalize_intensity: non-finite input values");
  float lo = image[0], hi = image[0];
  for (float v : image.data) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  Tensor out(image.shape);
  if (hi == lo) return out;  // zeros
  const float inv = 1.f / (hi - lo);
  for (int64_t i = 0; i < image.numel(); ++i) out[i] = (image[i] - lo) * inv;
  return out;
}

/// Same uniformly drawn window applied to image, y and z.
inline Sample random_crop(const Sample& s, int ph, int pw, Rng& rng) {
  const int C = s.image.dim(0), H = s.image.dim(1), W = s.image.dim(2);
  if (ph > H || pw > W)
    throw std::invalid_argument("random_crop: patch " + std::to_string(ph) + "x" +
                                std::to_string(pw) + " exceeds image " + std::to_string(H) + "x" +
                                std::to_string(W));
  const int oy = static_cast<int>(rng.below(static_cast<uint64_t>(H - ph + 1)));
  const int ox = static_cast<int>(rng.below(static_cast<uint64_t>(W - pw + 1)));
  Sample out;
  out.seed = s.seed;
  out.image = Tensor({C, ph, pw});
  for (int c = 0; c < C; ++c)
    for (int y = 0; y < ph; ++y)
      for (int x = 0; x < pw; ++x)
        out.image[(static_cast<int64_t>(c) * ph + y) * pw + x] =
            s.image[(static_cast<int64_t>(c) * H + oy + y) * W + ox + x];
  out.y = LabelMap(ph, pw);
  for (int y = 0; y < ph; ++y)
    for (int x = 0; x < pw; ++x) out.y.at(y, x) = s.y.at(oy + y, ox + x);
  if (s.z) {
    LabelMap z(ph, pw);
    for (int y = 0; y < ph; ++y)
      for (int x = 0; x < pw; ++x) z.at(y, x) = s.z->at(oy + y, ox + x);
    out.z = std::move(z);
  }
  return out;
}

/// Uniformly picks n_sub fine indices without replacement; the rest of the
/// training samples lose their subclass maps (kept aside as oracle labels).
inline DatasetSplit split_dataset(std::vector<Sample> train, std::vector<Sample> val,
                                  std::vector<Sample> test, const HierarchySpec& hier, int n_sub,
                                  uint64_t seed) {
  if (n_sub > static_cast<int>(train.size()))
    throw std::invalid_argument("split_dataset: n_sub " + std::to_string(n_sub) +
                                " exceeds train size " + std::to_string(train.size()));
  Rng rng(seed, rng_stream::kSplit);
  std::vector<int> idx(train.size());
  for (size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
  // Partial Fisher-Yates: the first n_sub entries become the fine set.
  for (int i = 0; i < n_sub; ++i) {
    const int j = i + static_cast<int>(rng.below(static_cast<uint64_t>(idx.size() - i)));
    std::swap(idx[static_cast<size_t>(i)], idx[static_cast<size_t>(j)]);
  }
  std::vector<bool> is_fine(train.size(), false);
  for (int i = 0; i < n_sub; ++i) is_fine[static_cast<size_t>(idx[static_cast<size_t>(i)])] = true;

  DatasetSplit split;
  split.hierarchy = hier;
  split.val = std::move(val);
  split.test = std::move(test);
  for (size_t i = 0; i < train.size(); ++i) {
    if (is_fine[i]) {
      split.fine.push_back(std::move(train[i]));
    } else {
      Sample s = std::move(train[i]);
      split.coarse_oracle.push_back(*s.z);
      s.z.reset();
      split.coarse.push_back(std::move(s));
    }
  }
  return split;
}

// ---------------------------------------------------------------------------
// On-disk layout: <dir>/manifest with '# key = value' header lines plus one
// "id role seed" line per sample; per-sample directories hold image.tsr1,
// y.tsr1 and z.tsr1 (z_hidden.tsr1 for coarse samples).

struct DatasetParams {
  GenSpec gen;
  int n_train = 200;
  int n_sub = 5;
  int n_val = 20;
  int n_test = 40;
  uint64_t seed = 1;
};

namespace detail {
inline std::string sample_id(int i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "s%04d", i);
  return buf;
}
}  // namespace detail

inline void write_dataset(const std::string& dir, const DatasetParams& p) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  std::ofstream manifest(dir + "/manifest");
  if (!manifest) throw std::runtime_error("write_dataset: cannot write manifest in " + dir);
  manifest << "# n = " << p.n_train << "\n# n_sub = " << p.n_sub << "\n# val = " << p.n_val
           << "\n# test = " << p.n_test << "\n# k_fg = " << p.gen.k_fg
           << "\n# height = " << p.gen.height << "\n# width = " << p.gen.width
           << "\n# sigma = " << p.gen.noise_sigma << "\n# ring_gap = " << p.gen.ring_gap
           << "\n# jitter = " << p.gen.object_jitter << "\n# seed = " << p.seed << "\n";

  // Role assignment reuses the in-memory split so both paths agree.
  Rng split_rng(p.seed, rng_stream::kSplit);
  std::vector<int> idx(static_cast<size_t>(p.n_train));
  for (size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
  for (int i = 0; i < p.n_sub; ++i) {
    const int j = i + static_cast<int>(split_rng.below(static_cast<uint64_t>(idx.size() - i)));
    std::swap(idx[static_cast<size_t>(i)], idx[static_cast<size_t>(j)]);
  }
  std::vector<bool> is_fine(static_cast<size_t>(p.n_train), false);
  for (int i = 0; i < p.n_sub; ++i) is_fine[static_cast<size_t>(idx[static_cast<size_t>(i)])] = true;

  const int total = p.n_train + p.n_val + p.n_test;
  for (int i = 0; i < total; ++i) {
    const uint64_t sample_seed = p.seed * 1000003ULL + static_cast<uint64_t>(i);
    const Sample s = generate_sample(sample_seed, p.gen);
    const std::string id = detail::sample_id(i);
    std::string role;
    if (i < p.n_train)
      role = is_fine[static_cast<size_t>(i)] ? "fine" : "coarse";
    else if (i < p.n_train + p.n_val)
      role = "val";
    else
      role = "test";
    manifest << id << ' ' << role << ' ' << sample_seed << '\n';
    const std::string sdir = dir + "/" + id;
    fs::create_directories(sdir);
    save_tsr1(sdir + "/image.tsr1", s.image);
    save_tsr1(sdir + "/y.tsr1", labelmap_to_tensor(s.y));
    save_tsr1(sdir + (role == "coarse" ? "/z_hidden.tsr1" : "/z.tsr1"), labelmap_to_tensor(*s.z));
  }
  if (!manifest) throw std::runtime_error("write_dataset: manifest write failed in " + dir);
}

struct ManifestEntry {
  std::string id;
  std::string role;
  uint64_t seed;
};

struct LoadedDataset {
  DatasetParams params;
  DatasetSplit split;
  std::vector<ManifestEntry> entries;
};

/// Reads a dataset directory. Intensities are renormalized to [0,1] at load
/// time; hidden oracle labels of coarse samples are NOT loaded here.
inline LoadedDataset load_dataset(const std::string& dir) {
  std::ifstream manifest(dir + "/manifest");
  if (!manifest) throw std::runtime_error("load_dataset: no manifest in " + dir);
  LoadedDataset ds;
  std::map<std::string, std::string> header;
  std::string line;
  while (std::getline(manifest, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      std::istringstream is(line.substr(1));
      std::string key, eq, value;
      if (is >> key >> eq >> value && eq == "=") header[key] = value;
      continue;
    }
    std::istringstream is(line);
    ManifestEntry e;
    if (!(is >> e.id >> e.role >> e.seed))
      throw std::runtime_error("load_dataset: malformed manifest line: " + line);
    ds.entries.push_back(e);
  }
  auto geti = [&](const std::string& k, int dflt) {
    return header.count(k) ? std::stoi(header[k]) : dflt;
  };
  ds.params.n_train = geti("n", 0);
  ds.params.n_sub = geti("n_sub", 0);
  ds.params.n_val = geti("val", 0);
  ds.params.n_test = geti("test", 0);
  ds.params.gen.k_fg = geti("k_fg", 3);
  ds.params.gen.height = geti("height", 64);
  ds.params.gen.width = geti("width", 64);
  if (header.count("sigma")) ds.params.gen.noise_sigma = std::stof(header["sigma"]);
  if (header.count("ring_gap")) ds.params.gen.ring_gap = std::stof(header["ring_gap"]);
  if (header.count("jitter")) ds.params.gen.object_jitter = std::stof(header["jitter"]);
  if (header.count("seed")) ds.params.seed = std::stoull(header["seed"]);

  ds.split.hierarchy = ds.params.gen.hierarchy();
  for (const auto& e : ds.entries) {
    const std::string sdir = dir + "/" + e.id;
    Sample s;
    s.seed = e.seed;
    s.image = normalize_intensity(load_tsr1(sdir + "/image.tsr1"));
    s.y = tensor_to_labelmap(load_tsr1(sdir + "/y.tsr1"));
    if (e.role != "coarse") s.z = tensor_to_labelmap(load_tsr1(sdir + "/z.tsr1"));
    if (e.role == "fine")
      ds.split.fine.push_back(std::move(s));
    else if (e.role == "coarse")
      ds.split.coarse.push_back(std::move(s));
    else if (e.role == "val")
      ds.split.val.push_back(std::move(s));
    else if (e.role == "test")
      ds.split.test.push_back(std::move(s));
    else
      throw std::runtime_error("load_dataset: unknown role '" + e.role + "' for " + e.id);
  }
  return ds;
}

/// Oracle subclass labels of coarse samples, for diagnostics only.
inline std::vector<LabelMap> load_hidden_labels(const std::string& dir) {
  std::ifstream manifest(dir + "/manifest");
  if (!manifest) throw std::runtime_error("load_hidden_labels: no manifest in " + dir);
  std::vector<LabelMap> out;
  std::string line;
  while (std::getline(manifest, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream is(line);
    std::string id, role;
    uint64_t seed;
    if ((is >> id >> role >> seed) && role == "coarse")
      out.push_back(tensor_to_labelmap(load_tsr1(dir + "/" + id + "/z_hidden.tsr1")));
  }
  return out;
}

}  // namespace subseg
