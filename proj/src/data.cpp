#include "ugp/data.hpp"

#include "ugp/errors.hpp"
#include "ugp/hash.hpp"

#include <nlohmann/json.hpp>
#include <png.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <random>
#include <set>
#include <sstream>

namespace ugp::data {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct FileCloser {
  void operator()(FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<FILE, FileCloser>;

// libpng reports errors through longjmp; the handlers rethrow as exceptions
// only after the read/write structs are torn down by the caller.
void png_error_handler(png_structp png, png_const_charp msg) {
  auto* message = static_cast<std::string*>(png_get_error_ptr(png));
  if (message) *message = msg;
  png_longjmp(png, 1);
}

void png_warning_handler(png_structp, png_const_charp) {}

}  // namespace

Image load_image(const fs::path& path) {
  if (!fs::exists(path)) throw NotFound(path.string());
  FilePtr file(std::fopen(path.c_str(), "rb"));
  if (!file) throw IOError("cannot open " + path.string());

  std::array<png_byte, 8> signature{};
  if (std::fread(signature.data(), 1, signature.size(), file.get()) != signature.size() ||
      png_sig_cmp(signature.data(), 0, signature.size()) != 0) {
    throw FormatError("not a PNG file: " + path.string());
  }

  std::string message;
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &message, png_error_handler, png_warning_handler);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IOError("libpng allocation failed");
  }

  std::vector<uint8_t> buffer;
  std::vector<png_bytep> rows;
  size_t row_bytes = 0;
  int out_depth = 0;
  png_uint_32 width = 0, height = 0;
  int bit_depth = 0;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw FormatError("undecodable PNG " + path.string() + ": " + message);
  }
  png_init_io(png, file.get());
  png_set_sig_bytes(png, static_cast<int>(signature.size()));
  png_read_info(png, info);

  width = png_get_image_width(png, info);
  height = png_get_image_height(png, info);
  bit_depth = png_get_bit_depth(png, info);
  const int color = png_get_color_type(png, info);

  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && bit_depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_strip_alpha(png);
  if (bit_depth == 16) png_set_swap(png);  // host (little-endian) order
  png_read_update_info(png, info);

  out_depth = png_get_bit_depth(png, info);
  row_bytes = png_get_rowbytes(png, info);
  buffer.resize(row_bytes * height);
  rows.resize(height);
  for (png_uint_32 r = 0; r < height; ++r) rows[r] = buffer.data() + r * row_bytes;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  if (row_bytes != static_cast<size_t>(width) * 3 * (out_depth / 8)) {
    throw FormatError("unexpected PNG layout after conversion: " + path.string());
  }

  auto out = torch::empty({3, static_cast<int64_t>(height), static_cast<int64_t>(width)}, torch::kFloat32);
  auto acc = out.accessor<float, 3>();
  if (out_depth == 16) {
    const auto* px = reinterpret_cast<const uint16_t*>(buffer.data());
    for (png_uint_32 r = 0; r < height; ++r)
      for (png_uint_32 c = 0; c < width; ++c)
        for (int ch = 0; ch < 3; ++ch)
          acc[ch][r][c] = static_cast<float>(px[(static_cast<size_t>(r) * width + c) * 3 + ch] / 65535.0);
  } else {
    for (png_uint_32 r = 0; r < height; ++r)
      for (png_uint_32 c = 0; c < width; ++c)
        for (int ch = 0; ch < 3; ++ch)
          acc[ch][r][c] = static_cast<float>(buffer[(static_cast<size_t>(r) * width + c) * 3 + ch] / 255.0);
  }
  return Image(out);
}

uint8_t quantize(double value) {
  const double v = std::clamp(value, 0.0, 1.0);
  return static_cast<uint8_t>(std::lround(v * 255.0));
}

void save_image(const Image& img, const fs::path& path) {
  if (img.channels() != 3 && img.channels() != 1) {
    throw ShapeError("save_image expects 1 or 3 channels");
  }
  const auto width = static_cast<png_uint_32>(img.width());
  const auto height = static_cast<png_uint_32>(img.height());
  auto src = img.tensor().to(torch::kFloat64).contiguous();
  if (img.channels() == 1) src = src.expand({3, img.height(), img.width()}).contiguous();
  auto acc = src.accessor<double, 3>();
  std::vector<uint8_t> bytes(static_cast<size_t>(width) * height * 3);
  for (png_uint_32 r = 0; r < height; ++r)
    for (png_uint_32 c = 0; c < width; ++c)
      for (int ch = 0; ch < 3; ++ch) bytes[(static_cast<size_t>(r) * width + c) * 3 + ch] = quantize(acc[ch][r][c]);

  FilePtr file(std::fopen(path.c_str(), "wb"));
  if (!file) throw IOError("cannot write " + path.string());
  std::string message;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &message, png_error_handler, png_warning_handler);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw IOError("libpng allocation failed");
  }
  std::vector<png_bytep> rows(height);
  for (png_uint_32 r = 0; r < height; ++r) rows[r] = bytes.data() + static_cast<size_t>(r) * width * 3;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IOError("PNG encode failed for " + path.string() + ": " + message);
  }
  png_init_io(png, file.get());
  png_set_IHDR(png, info, width, height, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  if (std::fflush(file.get()) != 0) throw IOError("flush failed for " + path.string());
}

std::vector<fs::path> list_images(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw NotFound("directory " + dir.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    auto ext = e.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (ext == ".png") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end(),
            [](const fs::path& a, const fs::path& b) { return a.filename().string() < b.filename().string(); });
  return files;
}

int64_t entry_seed(uint64_t seed, const std::string& filename) { return json_safe_seed(hash_combine(seed, filename)); }

DatasetManifest build_manifest(const fs::path& clean_dir, const degrade::DegradationSpec& spec, uint64_t seed,
                               fs::path degraded_dir) {
  const auto files = list_images(clean_dir);
  if (files.empty()) throw EmptyDataset("no PNG images in " + clean_dir.string());
  const std::string spec_id = spec.id();
  if (degraded_dir.empty()) {
    auto base = clean_dir;
    if (!base.has_filename()) base = base.parent_path();
    degraded_dir = base.parent_path() / (base.filename().string() + "-" + spec_id);
  }
  DatasetManifest m;
  m.spec = spec;
  m.entries.reserve(files.size());
  for (const auto& f : files) {
    const auto name = f.filename().string();
    m.entries.push_back({f.string(), (degraded_dir / name).string(), entry_seed(seed, name), spec_id});
  }
  return m;
}

std::pair<DatasetManifest, DatasetManifest> split_manifest(const DatasetManifest& m, double test_fraction,
                                                           uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
    throw InvalidArgument("test_fraction must lie strictly between 0 and 1");
  }
  const size_t n = m.entries.size();
  const auto n_test = static_cast<size_t>(std::llround(test_fraction * static_cast<double>(n)));
  std::vector<size_t> order(n);
  for (size_t i = 0; i < n; ++i) order[i] = i;
  // Fisher-Yates driven by splitmix64 so the split is identical on every platform.
  uint64_t state = seed;
  for (size_t i = n; i > 1; --i) {
    state = splitmix64(state);
    std::swap(order[i - 1], order[state % i]);
  }
  std::vector<bool> is_test(n, false);
  for (size_t i = 0; i < n_test; ++i) is_test[order[i]] = true;

  DatasetManifest train{{}, m.spec}, test{{}, m.spec};
  for (size_t i = 0; i < n; ++i) (is_test[i] ? test : train).entries.push_back(m.entries[i]);
  return {std::move(train), std::move(test)};
}

std::string manifest_to_jsonl(const DatasetManifest& m) {
  std::ostringstream out;
  for (const auto& e : m.entries) {
    json line{{"clean", e.clean}, {"degraded", e.degraded}, {"seed", e.seed}, {"spec_id", e.spec_id}};
    out << line.dump() << "\n";
  }
  return out.str();
}

void write_manifest(const DatasetManifest& m, const fs::path& path) {
  std::set<std::string> seen;
  for (const auto& e : m.entries) {
    if (!seen.insert(e.clean).second) throw InvalidArgument("duplicate manifest path " + e.clean);
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IOError("cannot write " + path.string());
  out << manifest_to_jsonl(m);
  std::ofstream spec(path.string() + ".spec.json", std::ios::binary);
  if (!spec) throw IOError("cannot write spec sidecar for " + path.string());
  spec << json(m.spec).dump(2) << "\n";
}

DatasetManifest read_manifest(const fs::path& path) {
  if (!fs::exists(path)) throw NotFound(path.string());
  DatasetManifest m;
  const fs::path spec_path = path.string() + ".spec.json";
  try {
    if (fs::exists(spec_path)) {
      json spec;
      std::ifstream(spec_path) >> spec;
      m.spec = spec.get<degrade::DegradationSpec>();
    }
    std::ifstream in(path);
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      auto j = json::parse(line);
      m.entries.push_back({j.at("clean").get<std::string>(), j.at("degraded").get<std::string>(),
                           j.at("seed").get<int64_t>(), j.at("spec_id").get<std::string>()});
    }
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  return m;
}

void materialize(const DatasetManifest& m, const degrade::Degrader& degrader) {
  for (const auto& e : m.entries) {
    const auto clean = load_image(e.clean);
    const fs::path out = e.degraded;
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    save_image(degrader(clean, static_cast<uint64_t>(e.seed)), out);
  }
}

std::vector<Pair> load_pairs(const DatasetManifest& m) {
  std::vector<Pair> pairs;
  pairs.reserve(m.entries.size());
  for (const auto& e : m.entries) pairs.push_back({load_image(e.clean), load_image(e.degraded)});
  return pairs;
}

namespace {

double smoothstep(double edge0, double edge1, double x) {
  const double t = std::clamp((x - edge0) / (edge1 - edge0), 0.0, 1.0);
  return t * t * (3.0 - 2.0 * t);
}

// Soft inside-mask of an axis-aligned ellipse; `soft` is the edge width in
// normalized radius units.
double ellipse(double x, double y, double cx, double cy, double rx, double ry, double soft = 0.06) {
  const double d = std::sqrt((x - cx) * (x - cx) / (rx * rx) + (y - cy) * (y - cy) / (ry * ry));
  return 1.0 - smoothstep(1.0 - soft, 1.0 + soft, d);
}

using Rgb = std::array<double, 3>;

void blend(Rgb& dst, const Rgb& src, double alpha) {
  for (int c = 0; c < 3; ++c) dst[c] = dst[c] * (1.0 - alpha) + src[c] * alpha;
}

}  // namespace

std::vector<Image> generate_toy_faces(int count, int resolution, uint64_t seed) {
  if (count < 1 || resolution < 8) throw InvalidArgument("toy corpus needs count >= 1 and resolution >= 8");
  std::vector<Image> out;
  out.reserve(static_cast<size_t>(count));
  for (int n = 0; n < count; ++n) {
    std::mt19937_64 rng(splitmix64(seed * 0x9E37ull + static_cast<uint64_t>(n)));
    std::uniform_real_distribution<double> u(0.0, 1.0);
    auto range = [&](double lo, double hi) { return lo + (hi - lo) * u(rng); };

    const Rgb bg_top{range(0.1, 0.9), range(0.1, 0.9), range(0.1, 0.9)};
    const Rgb bg_bottom{range(0.1, 0.9), range(0.1, 0.9), range(0.1, 0.9)};
    const double tone = range(0.35, 0.95);
    const Rgb skin{tone, tone * range(0.72, 0.85), tone * range(0.55, 0.7)};
    const double hair_level = range(0.05, 0.6);
    const Rgb hair{hair_level, hair_level * range(0.6, 0.9), hair_level * range(0.4, 0.7)};
    const Rgb iris{range(0.05, 0.4), range(0.1, 0.5), range(0.1, 0.6)};
    const Rgb lips{range(0.55, 0.85), range(0.15, 0.35), range(0.2, 0.4)};

    const double cx = range(0.45, 0.55), cy = range(0.52, 0.6);
    const double rx = range(0.26, 0.32), ry = range(0.33, 0.4);
    const double eye_dx = range(0.1, 0.13), eye_y = cy - range(0.06, 0.1);
    const double eye_r = range(0.035, 0.05);
    const double mouth_y = cy + range(0.15, 0.2), mouth_w = range(0.07, 0.12);
    const double light = range(-0.6, 0.6);
    const double hair_freq = range(18.0, 30.0), hair_phase = range(0.0, 6.28);
    const double bg_freq = range(2.0, 6.0), bg_phase = range(0.0, 6.28);

    auto img = torch::empty({3, resolution, resolution}, torch::kFloat32);
    auto acc = img.accessor<float, 3>();
    for (int r = 0; r < resolution; ++r) {
      for (int c = 0; c < resolution; ++c) {
        const double x = (c + 0.5) / resolution, y = (r + 0.5) / resolution;
        Rgb px;
        const double wave = 0.06 * std::sin(bg_freq * 6.28 * x + bg_phase) * std::cos(bg_freq * 3.14 * y);
        for (int ch = 0; ch < 3; ++ch) px[ch] = bg_top[ch] * (1.0 - y) + bg_bottom[ch] * y + wave;

        const double hair_mask = ellipse(x, y, cx, cy - 0.06, rx * 1.12, ry * 1.02);
        Rgb hair_px = hair;
        const double strands = 0.08 * std::sin(hair_freq * 6.28 * x + hair_phase + 4.0 * y);
        for (double& v : hair_px) v += strands;
        blend(px, hair_px, hair_mask);

        const double face_mask = ellipse(x, y, cx, cy + 0.02, rx, ry * 0.92);
        Rgb face_px = skin;
        const double shade = 1.0 + 0.25 * light * (x - cx) / rx - 0.1 * ((y - cy) / ry) * ((y - cy) / ry);
        for (double& v : face_px) v *= shade;
        blend(px, face_px, face_mask);

        for (int side : {-1, 1}) {
          const double ex = cx + side * eye_dx;
          blend(px, hair, 0.9 * ellipse(x, y, ex, eye_y - 2.2 * eye_r, eye_r * 1.8, eye_r * 0.45, 0.2));
          blend(px, {0.95, 0.95, 0.92}, ellipse(x, y, ex, eye_y, eye_r * 1.5, eye_r, 0.15));
          blend(px, iris, ellipse(x, y, ex, eye_y, eye_r * 0.75, eye_r * 0.75, 0.15));
          blend(px, {0.02, 0.02, 0.02}, ellipse(x, y, ex, eye_y, eye_r * 0.35, eye_r * 0.35, 0.2));
        }
        Rgb nose = face_px;
        for (double& v : nose) v *= 0.82;
        blend(px, nose, 0.6 * ellipse(x, y, cx, cy + 0.07, 0.018, 0.05, 0.3));
        blend(px, lips, ellipse(x, y, cx, mouth_y, mouth_w, 0.025, 0.25));

        for (int ch = 0; ch < 3; ++ch) acc[ch][r][c] = static_cast<float>(std::clamp(px[ch], 0.0, 1.0));
      }
    }
    out.emplace_back(img);
  }
  return out;
}

std::vector<fs::path> write_toy_corpus(const fs::path& dir, int count, int resolution, uint64_t seed) {
  fs::create_directories(dir);
  const auto images = generate_toy_faces(count, resolution, seed);
  std::vector<fs::path> paths;
  for (size_t i = 0; i < images.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "face-%04zu.png", i);
    paths.push_back(dir / name);
    save_image(images[i], paths.back());
  }
  return paths;
}

}  // namespace ugp::data
