#include "diffattn/datakit.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "diffattn/gt_saliency.hpp"

namespace fs = std::filesystem;

namespace diffattn {
namespace {

cv::Mat to_mat(const Image& img) {
  cv::Mat rgb(img.height, img.width, CV_8UC3, const_cast<std::uint8_t*>(img.rgb.data()));
  return rgb.clone();
}

Image from_mat_rgb(const cv::Mat& rgb) {
  Image img;
  img.height = rgb.rows;
  img.width = rgb.cols;
  cv::Mat contiguous = rgb.isContinuous() ? rgb : rgb.clone();
  img.rgb.assign(contiguous.data, contiguous.data + contiguous.total() * 3);
  return img;
}

std::set<std::string> stems_in(const fs::path& dir, const std::string& ext) {
  std::set<std::string> out;
  if (!fs::is_directory(dir)) return out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ext) out.insert(entry.path().stem().string());
  }
  return out;
}

std::vector<std::string> split_words(const std::string& s) {
  std::istringstream in(s);
  std::vector<std::string> out;
  for (std::string w; in >> w;) out.push_back(w);
  return out;
}

std::uint8_t to_byte(double v) { return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L)); }

}  // namespace

Image read_png(const fs::path& path) {
  cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (bgr.empty()) throw Error(ErrorKind::Io, "cannot read image " + path.string());
  cv::Mat rgb;
  cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
  return from_mat_rgb(rgb);
}

void write_png(const fs::path& path, const Image& img) {
  cv::Mat bgr;
  cv::cvtColor(to_mat(img), bgr, cv::COLOR_RGB2BGR);
  if (!cv::imwrite(path.string(), bgr)) throw Error(ErrorKind::Io, "cannot write image " + path.string());
}

Image resize_image(const Image& img, int height, int width) {
  if (img.height == height && img.width == width) return img;
  const bool shrink = height <= img.height && width <= img.width;
  cv::Mat out;
  cv::resize(to_mat(img), out, cv::Size(width, height), 0, 0, shrink ? cv::INTER_AREA : cv::INTER_LINEAR);
  return from_mat_rgb(out);
}

void write_map_png16(const fs::path& path, const Grid& map) {
  cv::Mat out(map.height(), map.width(), CV_16UC1);
  for (int y = 0; y < map.height(); ++y) {
    for (int x = 0; x < map.width(); ++x) {
      const double v = std::clamp(map.at(y, x), 0.0, 1.0);
      out.at<std::uint16_t>(y, x) = static_cast<std::uint16_t>(std::lround(v * 65535.0));
    }
  }
  if (!cv::imwrite(path.string(), out)) throw Error(ErrorKind::Io, "cannot write map " + path.string());
}

Grid read_map_png(const fs::path& path) {
  cv::Mat raw = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
  if (raw.empty()) throw Error(ErrorKind::Io, "cannot read map " + path.string());
  if (raw.channels() != 1) {
    cv::Mat gray;
    cv::cvtColor(raw, gray, raw.channels() == 4 ? cv::COLOR_BGRA2GRAY : cv::COLOR_BGR2GRAY);
    raw = gray;
  }
  Grid g(raw.rows, raw.cols);
  const double scale = raw.depth() == CV_16U ? 65535.0 : 255.0;
  for (int y = 0; y < raw.rows; ++y) {
    for (int x = 0; x < raw.cols; ++x) {
      g.at(y, x) = (raw.depth() == CV_16U ? raw.at<std::uint16_t>(y, x) : raw.at<std::uint8_t>(y, x)) / scale;
    }
  }
  return g;
}

Grid resize_grid(const Grid& g, int height, int width) {
  if (g.height() == height && g.width() == width) return g;
  cv::Mat src(g.height(), g.width(), CV_64FC1, const_cast<double*>(g.values().data()));
  cv::Mat dst;
  cv::resize(src, dst, cv::Size(width, height), 0, 0, cv::INTER_LINEAR);
  std::vector<double> vals(dst.begin<double>(), dst.end<double>());
  return Grid(height, width, std::move(vals));
}

Image heat_overlay(const Image& img, const Grid& map, double alpha) {
  const Grid resized = resize_grid(map, img.height, img.width);
  cv::Mat gray(img.height, img.width, CV_8UC1);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) gray.at<std::uint8_t>(y, x) = to_byte(std::clamp(resized.at(y, x), 0.0, 1.0) * 255.0);
  cv::Mat heat_bgr, heat_rgb, blended;
  cv::applyColorMap(gray, heat_bgr, cv::COLORMAP_JET);
  cv::cvtColor(heat_bgr, heat_rgb, cv::COLOR_BGR2RGB);
  cv::addWeighted(to_mat(img), 1.0 - alpha, heat_rgb, alpha, 0.0, blended);
  return from_mat_rgb(blended);
}

FixationMap Sample::fixation_map() const { return FixationMap(image.height, image.width, fixations); }

SaliencyMap Sample::gt(Diagnostics* diag) const { return make_gt(fixation_map(), sigma, diag); }

std::string_view split_name(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "train";
}

Split parse_split(std::string_view name) {
  if (name == "train") return Split::Train;
  if (name == "val") return Split::Val;
  if (name == "test") return Split::Test;
  throw Error(ErrorKind::Config, "unknown split '" + std::string(name) + "'");
}

double DatasetManifest::effective_sigma() const { return sigma > 0.0 ? sigma : default_sigma(height); }

DatasetManifest read_manifest(const fs::path& root, Split split, DatasetManifest base) {
  base.root = root;
  base.split = split;
  const auto file = root / "manifest";
  if (!fs::exists(file)) return base;
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::read_ini(file.string(), tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw Error(ErrorKind::Data, "malformed manifest " + file.string() + ": " + e.message());
  }
  base.sigma = tree.get<double>("sigma", base.sigma);
  base.height = tree.get<int>("height", base.height);
  base.width = tree.get<int>("width", base.width);
  if (base.height % 32 != 0 || base.width % 32 != 0 || base.height <= 0 || base.width <= 0) {
    throw Error(ErrorKind::Config, "manifest size " + std::to_string(base.height) + "x" +
                                       std::to_string(base.width) + " must be positive multiples of 32");
  }
  return base;
}

std::vector<std::string> split_ids(const DatasetManifest& m) {
  const auto file = m.root / "manifest";
  if (fs::exists(file)) {
    boost::property_tree::ptree tree;
    boost::property_tree::read_ini(file.string(), tree);
    if (auto listed = tree.get_optional<std::string>(std::string(split_name(m.split)))) {
      auto ids = split_words(*listed);
      std::sort(ids.begin(), ids.end());
      return ids;
    }
  }
  const auto images = stems_in(m.root / "images", ".png");
  return {images.begin(), images.end()};
}

std::vector<Sample> load_dataset(const DatasetManifest& m, Diagnostics* diag) {
  const auto images = stems_in(m.root / "images", ".png");
  const auto fixations = stems_in(m.root / "fixations", ".txt");

  std::vector<std::string> orphans;
  for (const auto& id : images)
    if (!fixations.contains(id)) orphans.push_back("images/" + id + ".png");
  for (const auto& id : fixations)
    if (!images.contains(id)) orphans.push_back("fixations/" + id + ".txt");
  const auto ids = split_ids(m);
  for (const auto& id : ids)
    if (!images.contains(id) && !fixations.contains(id)) orphans.push_back("manifest:" + id);
  if (!orphans.empty()) {
    std::string msg = "dataset " + m.root.string() + " has unmatched files:";
    for (const auto& o : orphans) msg += " " + o;
    throw Error(ErrorKind::Data, msg);
  }

  std::vector<Sample> samples;
  samples.reserve(ids.size());
  for (const auto& id : ids) {
    Sample s;
    s.id = id;
    Image native = read_png(m.root / "images" / (id + ".png"));
    for (Point p : read_fixations(m.root / "fixations" / (id + ".txt"))) {
      if (p.x < 0 || p.y < 0 || p.x >= native.width || p.y >= native.height) {
        throw Error(ErrorKind::Data, "fixation outside image in sample " + id);
      }
      s.fixations.push_back(rescale_point(p, native.height, native.width, m.height, m.width));
    }
    s.image = resize_image(native, m.height, m.width);
    s.sigma = m.effective_sigma();
    samples.push_back(std::move(s));
  }
  if (samples.empty()) warn(diag, "split '" + std::string(split_name(m.split)) + "' is empty");
  return samples;
}

std::vector<Point> read_fixations(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot read fixations " + path.string());
  std::vector<Point> pts;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ls(line);
    Point p;
    std::string rest;
    if (!(ls >> p.x >> p.y) || (ls >> rest)) {
      throw Error(ErrorKind::Data, path.string() + ":" + std::to_string(lineno) + ": expected \"x y\"");
    }
    pts.push_back(p);
  }
  return pts;
}

void write_fixations(const fs::path& path, const std::vector<Point>& pts) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::Io, "cannot write fixations " + path.string());
  for (const auto& p : pts) out << p.x << ' ' << p.y << '\n';
}

Point rescale_point(Point p, int src_height, int src_width, int dst_height, int dst_width) {
  auto map = [](int v, int src, int dst) {
    const auto scaled = static_cast<int>(std::floor((v + 0.5) * dst / src));
    return std::clamp(scaled, 0, dst - 1);
  };
  return {map(p.x, src_width, dst_width), map(p.y, src_height, dst_height)};
}

Sample flip_sample(const Sample& s) {
  Sample out = s;
  const int w = s.image.width;
  for (int y = 0; y < s.image.height; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) out.image.at(y, w - 1 - x, c) = s.image.at(y, x, c);
  for (auto& p : out.fixations) p.x = w - 1 - p.x;
  return out;
}

Image color_jitter(const Image& img, double brightness, double contrast, double saturation) {
  const std::size_t n = static_cast<std::size_t>(img.height) * img.width;
  std::vector<double> px(img.rgb.begin(), img.rgb.end());
  for (double& v : px) v *= brightness;
  double mean_gray = 0.0;
  for (std::size_t i = 0; i < n; ++i) mean_gray += 0.299 * px[3 * i] + 0.587 * px[3 * i + 1] + 0.114 * px[3 * i + 2];
  mean_gray /= static_cast<double>(std::max<std::size_t>(n, 1));
  for (double& v : px) v = (v - mean_gray) * contrast + mean_gray;
  for (std::size_t i = 0; i < n; ++i) {
    const double gray = 0.299 * px[3 * i] + 0.587 * px[3 * i + 1] + 0.114 * px[3 * i + 2];
    for (int c = 0; c < 3; ++c) px[3 * i + c] = gray + (px[3 * i + c] - gray) * saturation;
  }
  Image out = img;
  for (std::size_t i = 0; i < px.size(); ++i) out.rgb[i] = to_byte(px[i]);
  return out;
}

Sample augment(const Sample& s, std::mt19937_64& rng, const JitterConfig& cfg) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Sample out = unit(rng) < cfg.flip_probability ? flip_sample(s) : s;
  auto factor = [&](double range) { return 1.0 + range * (2.0 * unit(rng) - 1.0); };
  const double b = factor(cfg.brightness);
  const double c = factor(cfg.contrast);
  const double sat = factor(cfg.saturation);
  out.image = color_jitter(out.image, b, c, sat);
  return out;
}

Point synth_vanishing_point(int height, int width) {
  return {width / 2, static_cast<int>(std::lround(0.4 * height))};
}

void synth_dataset(const SynthSpec& spec, const fs::path& out) {
  if (spec.count < 1) throw Error(ErrorKind::Config, "synthetic dataset needs at least one sample");
  if (spec.height < 32 || spec.width < 32) throw Error(ErrorKind::Config, "synthetic images must be >= 32x32");
  std::error_code ec;
  fs::create_directories(out / "images", ec);
  fs::create_directories(out / "fixations", ec);
  if (ec || !fs::is_directory(out / "images")) {
    throw Error(ErrorKind::Io, "cannot create dataset directory " + out.string());
  }

  const int h = spec.height;
  const int w = spec.width;
  const Point planted = synth_vanishing_point(h, w);
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto uniform_int = [&](int lo, int hi) { return lo + static_cast<int>(unit(rng) * (hi - lo + 1)) % (hi - lo + 1); };

  std::vector<std::string> ids;
  for (int n = 0; n < spec.count; ++n) {
    std::ostringstream name;
    name << "s" << std::setw(5) << std::setfill('0') << n;
    const std::string id = name.str();
    ids.push_back(id);

    const int vx = planted.x + uniform_int(-w / 16, w / 16);
    const int vy = planted.y + uniform_int(-h / 32, h / 32);
    Image img{h, w, std::vector<std::uint8_t>(static_cast<std::size_t>(h) * w * 3)};
    const double road_half = 0.45 * w;
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        double r, g, b;
        if (y < vy) {
          const double t = static_cast<double>(y) / std::max(vy, 1);
          r = 120 + 80 * t;
          g = 160 + 60 * t;
          b = 230 - 10 * t;
        } else {
          const double depth = static_cast<double>(y - vy) / std::max(h - 1 - vy, 1);
          const double half = depth * road_half;
          if (std::abs(x - vx) <= half) {
            r = g = b = 70 + 40 * depth;
            const bool dash = static_cast<int>(std::floor(std::sqrt(depth) * 8)) % 2 == 0;
            if (dash && std::abs(x - vx) <= std::max(0.5, 0.03 * half)) r = g = b = 235;
          } else {
            r = 60 + 30 * depth;
            g = 120 + 50 * depth;
            b = 50;
          }
        }
        img.at(y, x, 0) = to_byte(r);
        img.at(y, x, 1) = to_byte(g);
        img.at(y, x, 2) = to_byte(b);
      }
    }

    std::vector<Point> cars;
    const int n_cars = uniform_int(1, 3);
    for (int c = 0; c < n_cars; ++c) {
      const double depth = 0.2 + 0.7 * unit(rng);
      const int cy = vy + static_cast<int>(depth * (h - 1 - vy));
      const int cx = vx + static_cast<int>((2.0 * unit(rng) - 1.0) * 0.8 * depth * road_half);
      const int cw = std::max(2, static_cast<int>(depth * w * 0.18));
      const int ch = std::max(2, static_cast<int>(cw * 0.7));
      const std::uint8_t col[3] = {to_byte(255 * unit(rng)), to_byte(255 * unit(rng)), to_byte(255 * unit(rng))};
      for (int y = cy - ch / 2; y <= cy + ch / 2; ++y)
        for (int x = cx - cw / 2; x <= cx + cw / 2; ++x)
          if (y >= 0 && y < h && x >= 0 && x < w)
            for (int k = 0; k < 3; ++k) img.at(y, x, k) = col[k];
      cars.push_back({std::clamp(cx, 0, w - 1), std::clamp(cy, 0, h - 1)});
    }

    std::vector<Point> fix;
    const int n_fix = uniform_int(1, 5);
    auto clamp_pt = [&](double x, double y) {
      return Point{std::clamp(static_cast<int>(std::lround(x)), 0, w - 1),
                   std::clamp(static_cast<int>(std::lround(y)), 0, h - 1)};
    };
    for (int f = 0; f < n_fix; ++f) {
      if (f == 0 || unit(rng) < 0.6) {
        const double spread = f == 0 ? h / 32.0 : h / 16.0;
        fix.push_back(clamp_pt(vx + spread * normal(rng), vy + spread * normal(rng)));
      } else {
        const Point car = cars[static_cast<std::size_t>(uniform_int(0, n_cars - 1))];
        fix.push_back(clamp_pt(car.x + normal(rng), car.y + normal(rng)));
      }
    }
    write_png(out / "images" / (id + ".png"), img);
    write_fixations(out / "fixations" / (id + ".txt"), fix);
  }

  const std::size_t n_held = std::max<std::size_t>(1, ids.size() / 5);
  auto join = [](auto first, auto last) {
    std::string s;
    for (auto it = first; it != last; ++it) s += (s.empty() ? "" : " ") + *it;
    return s;
  };
  std::ofstream manifest(out / "manifest");
  if (!manifest) throw Error(ErrorKind::Io, "cannot write manifest in " + out.string());
  manifest << "sigma = " << default_sigma(h) << '\n';
  manifest << "height = " << h << '\n';
  manifest << "width = " << w << '\n';
  manifest << "train = " << join(ids.begin(), ids.end()) << '\n';
  manifest << "val = " << join(ids.end() - static_cast<std::ptrdiff_t>(n_held), ids.end()) << '\n';
  manifest << "test = " << join(ids.end() - static_cast<std::ptrdiff_t>(n_held), ids.end()) << '\n';
}

}  // namespace diffattn
