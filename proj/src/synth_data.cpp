#include "segloss/synth_data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "segloss/error.hpp"
#include "segloss/parallel.hpp"

namespace segloss {

namespace {

// Coarse random grid bilinearly upsampled to full resolution.
Image value_noise_background(int h, int w, Rng& rng) {
  const int cell = 8;
  const int gh = (h + cell - 1) / cell + 1, gw = (w + cell - 1) / cell + 1;
  std::vector<double> grid(size_t(gh) * gw);
  for (double& v : grid) v = rng.uniform(0.15, 0.55);
  Image img(h, w);
  for (int y = 0; y < h; ++y) {
    const double gy = double(y) / cell;
    const int y0 = int(gy);
    const double fy = gy - y0;
    for (int x = 0; x < w; ++x) {
      const double gx = double(x) / cell;
      const int x0 = int(gx);
      const double fx = gx - x0;
      const double v00 = grid[size_t(y0) * gw + x0];
      const double v01 = grid[size_t(y0) * gw + x0 + 1];
      const double v10 = grid[size_t(y0 + 1) * gw + x0];
      const double v11 = grid[size_t(y0 + 1) * gw + x0 + 1];
      img.at(y, x) = (1 - fy) * ((1 - fx) * v00 + fx * v01) +
                     fy * ((1 - fx) * v10 + fx * v11);
    }
  }
  // fine noise on top
  for (double& v : img.pix) v += rng.uniform(-0.02, 0.02);
  return img;
}

struct Blob {
  double cy, cx, a, b, phi;
};

// Normalized elliptical radius: 1 on the blob boundary.
double blob_radius(const Blob& bl, double y, double x) {
  const double dy = y - bl.cy, dx = x - bl.cx;
  const double c = std::cos(bl.phi), s = std::sin(bl.phi);
  const double u = (dx * c + dy * s) / bl.a;
  const double v = (-dx * s + dy * c) / bl.b;
  return std::sqrt(u * u + v * v);
}

Image blur3x3(const Image& src) {
  // 3x3 binomial kernel, edge-clamped
  static const double k[3] = {0.25, 0.5, 0.25};
  Image tmp(src.h, src.w), out(src.h, src.w);
  for (int y = 0; y < src.h; ++y)
    for (int x = 0; x < src.w; ++x) {
      double acc = 0;
      for (int d = -1; d <= 1; ++d)
        acc += k[d + 1] * src.at(y, std::clamp(x + d, 0, src.w - 1));
      tmp.at(y, x) = acc;
    }
  for (int y = 0; y < src.h; ++y)
    for (int x = 0; x < src.w; ++x) {
      double acc = 0;
      for (int d = -1; d <= 1; ++d)
        acc += k[d + 1] * tmp.at(std::clamp(y + d, 0, src.h - 1), x);
      out.at(y, x) = acc;
    }
  return out;
}

Sample make_sample(const std::string& id, int h, int w, bool lesion,
                   uint64_t seed) {
  Rng rng(Rng::mix(seed, id));
  Sample s;
  s.id = id;
  s.image = value_noise_background(h, w, rng);
  s.mask = Mask(h, w);
  s.has_lesion = lesion;
  if (lesion) {
    const int n_blobs = 1 + rng.uniform_int(3);
    std::vector<Blob> blobs;
    const double scale = double(std::min(h, w));
    for (int i = 0; i < n_blobs; ++i) {
      Blob bl;
      bl.cy = rng.uniform(0.18, 0.82) * h;
      bl.cx = rng.uniform(0.18, 0.82) * w;
      bl.a = std::max(2.5, rng.uniform(0.09, 0.22) * scale);
      bl.b = std::max(2.5, rng.uniform(0.09, 0.22) * scale);
      bl.phi = rng.uniform(0.0, 3.14159265358979323846);
      blobs.push_back(bl);
    }
    const double amp = rng.uniform(0.25, 0.45);
    Image field(h, w);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double g = 0.0;
        for (const Blob& bl : blobs)
          g = std::max(g, 1.0 - blob_radius(bl, y + 0.5, x + 0.5));
        field.at(y, x) = g;
        // support before blur, thresholded at half of the unit height
        if (g >= 0.5) s.mask.at(y, x) = 1;
      }
    const Image soft = blur3x3(field);
    for (int64_t i = 0; i < s.image.numel(); ++i)
      s.image.pix[size_t(i)] += amp * soft.pix[size_t(i)];
    if (s.mask.empty_fg())
      throw ContractError("generate_dataset: lesion sample " + id +
                          " produced an empty mask");
  }
  for (double& v : s.image.pix) v = std::clamp(v, 0.0, 1.0);
  return s;
}

std::string zero_pad(int v, int width) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%0*d", width, v);
  return buf;
}

}  // namespace

std::vector<Sample> generate_dataset(int n_lesion, int n_clean, int height,
                                     int width, uint64_t seed) {
  if (n_lesion < 0 || n_clean < 0 || n_lesion + n_clean == 0)
    throw ContractError("generate_dataset: need at least one sample");
  if (height < 8 || width < 8)
    throw ContractError("generate_dataset: images must be at least 8x8");
  std::vector<Sample> out(size_t(n_lesion + n_clean));
  par_for(n_lesion + n_clean, [&](int64_t i) {
    const bool lesion = i < n_lesion;
    const std::string id = lesion ? "les" + zero_pad(int(i), 4)
                                  : "cln" + zero_pad(int(i) - n_lesion, 4);
    out[size_t(i)] = make_sample(id, height, width, lesion, seed);
  });
  return out;
}

// --- PGM -------------------------------------------------------------------

namespace {

void write_pgm_bytes(const std::vector<uint8_t>& bytes, int h, int w,
                     const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open for writing: " + path.string());
  os << "P5\n" << w << " " << h << "\n255\n";
  os.write(reinterpret_cast<const char*>(bytes.data()),
           std::streamsize(bytes.size()));
  if (!os) throw IoError("write failed: " + path.string());
}

// Header parse per the PNM spec: whitespace-separated tokens, '#' comments.
std::vector<uint8_t> read_pgm_bytes(const std::filesystem::path& path, int& h,
                                    int& w) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open: " + path.string());
  std::string magic;
  is >> magic;
  if (magic != "P5") throw IoError("not a binary PGM (magic '" + magic + "'): " +
                                   path.string());
  auto next_int = [&](const char* what) {
    for (;;) {
      int ch = is.peek();
      if (ch == '#') {
        std::string line;
        std::getline(is, line);
      } else if (std::isspace(ch)) {
        is.get();
      } else {
        break;
      }
      if (!is) throw IoError(std::string("malformed PGM header (") + what + "): " +
                             path.string());
    }
    long v = -1;
    is >> v;
    if (!is || v < 0)
      throw IoError(std::string("malformed PGM header (") + what + "): " +
                    path.string());
    return v;
  };
  w = int(next_int("width"));
  h = int(next_int("height"));
  const long maxval = next_int("maxval");
  if (maxval != 255)
    throw IoError("unsupported PGM maxval " + std::to_string(maxval) + ": " +
                  path.string());
  is.get();  // single whitespace byte after maxval
  std::vector<uint8_t> bytes(size_t(h) * size_t(w));
  is.read(reinterpret_cast<char*>(bytes.data()), std::streamsize(bytes.size()));
  if (is.gcount() != std::streamsize(bytes.size()))
    throw IoError("PGM payload size mismatch (expected " +
                  std::to_string(bytes.size()) + " bytes): " + path.string());
  return bytes;
}

}  // namespace

void write_pgm(const Image& image, const std::filesystem::path& path) {
  std::vector<uint8_t> bytes(size_t(image.numel()));
  for (int64_t i = 0; i < image.numel(); ++i) {
    const double v = image.pix[size_t(i)];
    if (v < 0.0 || v > 1.0)
      throw DomainError("write_pgm: image value " + std::to_string(v) +
                        " outside [0,1]");
    bytes[size_t(i)] = uint8_t(std::lround(v * 255.0));
  }
  write_pgm_bytes(bytes, image.h, image.w, path);
}

void write_pgm(const Mask& mask, const std::filesystem::path& path) {
  std::vector<uint8_t> bytes(size_t(mask.numel()));
  for (int64_t i = 0; i < mask.numel(); ++i)
    bytes[size_t(i)] = mask.pix[size_t(i)] ? 255 : 0;
  write_pgm_bytes(bytes, mask.h, mask.w, path);
}

Image read_pgm_image(const std::filesystem::path& path) {
  int h = 0, w = 0;
  const std::vector<uint8_t> bytes = read_pgm_bytes(path, h, w);
  Image img(h, w);
  for (size_t i = 0; i < bytes.size(); ++i) img.pix[i] = double(bytes[i]) / 255.0;
  return img;
}

Mask read_pgm_mask(const std::filesystem::path& path) {
  int h = 0, w = 0;
  const std::vector<uint8_t> bytes = read_pgm_bytes(path, h, w);
  Mask m(h, w);
  for (size_t i = 0; i < bytes.size(); ++i) m.pix[i] = bytes[i] >= 128 ? 1 : 0;
  return m;
}

// --- manifest ---------------------------------------------------------------

void write_manifest(const std::vector<ManifestRow>& rows,
                    const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open for writing: " + path.string());
  os << "id,image_path,mask_path,has_lesion\n";
  for (const ManifestRow& r : rows)
    os << r.id << "," << r.image_path << "," << r.mask_path << ","
       << (r.has_lesion ? 1 : 0) << "\n";
  if (!os) throw IoError("write failed: " + path.string());
}

std::vector<ManifestRow> read_manifest(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open manifest: " + path.string());
  std::string line;
  if (!std::getline(is, line) || line != "id,image_path,mask_path,has_lesion")
    throw IoError("manifest missing expected header: " + path.string());
  std::vector<ManifestRow> rows;
  int lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::stringstream ss(line);
    ManifestRow r;
    std::string flag;
    if (!std::getline(ss, r.id, ',') || !std::getline(ss, r.image_path, ',') ||
        !std::getline(ss, r.mask_path, ',') || !std::getline(ss, flag))
      throw IoError("manifest line " + std::to_string(lineno) + " malformed: " +
                    path.string());
    if (flag != "0" && flag != "1")
      throw IoError("manifest line " + std::to_string(lineno) +
                    " has_lesion must be 0 or 1: " + path.string());
    r.has_lesion = flag == "1";
    rows.push_back(std::move(r));
  }
  return rows;
}

void write_dataset(const std::vector<Sample>& samples,
                   const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "images");
  fs::create_directories(dir / "masks");
  std::vector<ManifestRow> rows;
  for (const Sample& s : samples) {
    ManifestRow r;
    r.id = s.id;
    r.image_path = "images/" + s.id + ".pgm";
    r.mask_path = "masks/" + s.id + ".pgm";
    r.has_lesion = s.has_lesion;
    rows.push_back(r);
  }
  par_for(int64_t(samples.size()), [&](int64_t i) {
    const Sample& s = samples[size_t(i)];
    write_pgm(s.image, dir / rows[size_t(i)].image_path);
    write_pgm(s.mask, dir / rows[size_t(i)].mask_path);
  });
  write_manifest(rows, dir / "manifest.csv");
}

std::vector<Sample> load_dataset(const std::filesystem::path& manifest_path) {
  const std::filesystem::path base = manifest_path.parent_path();
  const std::vector<ManifestRow> rows = read_manifest(manifest_path);
  std::vector<Sample> samples(rows.size());
  par_for(int64_t(rows.size()), [&](int64_t i) {
    const ManifestRow& r = rows[size_t(i)];
    Sample s;
    s.id = r.id;
    s.image = read_pgm_image(base / r.image_path);
    s.mask = read_pgm_mask(base / r.mask_path);
    s.has_lesion = r.has_lesion;
    if (s.image.h != s.mask.h || s.image.w != s.mask.w)
      throw IoError("sample " + s.id + ": image and mask sizes differ");
    samples[size_t(i)] = std::move(s);
  });
  for (const Sample& s : samples)
    if (s.has_lesion != !s.mask.empty_fg())
      throw DomainError("sample " + s.id +
                        ": has_lesion flag contradicts mask content");
  return samples;
}

// --- folds ------------------------------------------------------------------

std::vector<std::string> FoldSplit::ids_in_fold(int fold) const {
  std::vector<std::string> out;
  for (const auto& [id, f] : fold_of)
    if (f == fold) out.push_back(id);
  return out;
}

std::vector<std::string> FoldSplit::ids_not_in_fold(int fold) const {
  std::vector<std::string> out;
  for (const auto& [id, f] : fold_of)
    if (f != fold) out.push_back(id);
  return out;
}

FoldSplit make_folds(const std::vector<std::string>& ids, int k, uint64_t seed) {
  if (k < 2) throw ContractError("make_folds: k must be >= 2");
  if (int(ids.size()) < k)
    throw ContractError("make_folds: need at least k=" + std::to_string(k) +
                        " ids, got " + std::to_string(ids.size()));
  std::vector<std::string> shuffled = ids;
  Rng rng(Rng::mix(seed, "folds"));
  rng.shuffle(shuffled);
  FoldSplit split;
  split.k = k;
  for (size_t i = 0; i < shuffled.size(); ++i)
    split.fold_of[shuffled[i]] = int(i % size_t(k));
  if (split.fold_of.size() != ids.size())
    throw ContractError("make_folds: duplicate ids");
  return split;
}

// --- augmentation -----------------------------------------------------------

namespace {

template <class T>
void flip_h(int h, int w, std::vector<T>& pix) {
  for (int y = 0; y < h; ++y)
    std::reverse(pix.begin() + int64_t(y) * w, pix.begin() + int64_t(y + 1) * w);
}

template <class T>
void flip_v(int h, int w, std::vector<T>& pix) {
  for (int y = 0; y < h / 2; ++y)
    std::swap_ranges(pix.begin() + int64_t(y) * w, pix.begin() + int64_t(y + 1) * w,
                     pix.begin() + int64_t(h - 1 - y) * w);
}

// Quarter-turn counterclockwise; requires h == w.
template <class T>
void rot90(int n, std::vector<T>& pix) {
  std::vector<T> out(pix.size());
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) out[size_t(n - 1 - x) * n + y] = pix[size_t(y) * n + x];
  pix = std::move(out);
}

}  // namespace

Sample augment(const Sample& sample, Rng& rng) {
  Sample out = sample;
  const int h = out.image.h, w = out.image.w;
  if (rng.bernoulli(0.5)) {
    flip_h(h, w, out.image.pix);
    flip_h(h, w, out.mask.pix);
  }
  if (rng.bernoulli(0.5)) {
    flip_v(h, w, out.image.pix);
    flip_v(h, w, out.mask.pix);
  }
  int quarters = rng.uniform_int(4);
  if (h != w && (quarters & 1)) quarters = 0;  // quarter turns need square images
  if (h != w && quarters == 2) {
    flip_h(h, w, out.image.pix);
    flip_h(h, w, out.mask.pix);
    flip_v(h, w, out.image.pix);
    flip_v(h, w, out.mask.pix);
  } else {
    for (int q = 0; q < quarters; ++q) {
      rot90(h, out.image.pix);
      rot90(h, out.mask.pix);
    }
  }
  const double offset = rng.uniform(-0.1, 0.1);
  for (double& v : out.image.pix) v = std::clamp(v + offset, 0.0, 1.0);
  out.has_lesion = !out.mask.empty_fg();
  return out;
}

}  // namespace segloss
