#include "posenorm/dataset_io.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <map>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>

#include <jpeglib.h>

namespace posenorm {

namespace fs = std::filesystem;

namespace {

std::string lower_extension(const fs::path& path) {
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext;
}

Image read_ppm(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open image " + path.string());
  std::string magic;
  in >> magic;
  if (magic != "P6") throw std::runtime_error(path.string() + ": not a binary PPM (P6)");
  int values[3];
  for (int& v : values) {
    in >> std::ws;
    while (in.peek() == '#') {
      std::string comment;
      std::getline(in, comment);
      in >> std::ws;
    }
    in >> v;
  }
  const int width = values[0], height = values[1], maxval = values[2];
  if (width <= 0 || height <= 0 || maxval <= 0 || maxval > 255)
    throw std::runtime_error(path.string() + ": unsupported PPM header");
  in.get();
  std::vector<unsigned char> raw(std::size_t(width) * height * 3);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!in) throw std::runtime_error(path.string() + ": truncated PPM data");
  Image img(height, width);
  for (Eigen::Index j = 0; j < img.pixels.cols(); ++j)
    for (int c = 0; c < 3; ++c) img.pixels(c, j) = raw[j * 3 + c] / float(maxval);
  return img;
}

struct JpegErrorManager {
  jpeg_error_mgr base;
  char message[JMSG_LENGTH_MAX];
};

[[noreturn]] void jpeg_throw(j_common_ptr cinfo) {
  auto* err = reinterpret_cast<JpegErrorManager*>(cinfo->err);
  (*cinfo->err->format_message)(cinfo, err->message);
  throw std::runtime_error(std::string("jpeg: ") + err->message);
}

Image read_jpeg(const fs::path& path) {
  std::unique_ptr<FILE, int (*)(FILE*)> file(std::fopen(path.string().c_str(), "rb"), &std::fclose);
  if (!file) throw std::runtime_error("cannot open image " + path.string());
  jpeg_decompress_struct cinfo{};
  JpegErrorManager err{};
  cinfo.err = jpeg_std_error(&err.base);
  err.base.error_exit = jpeg_throw;
  Image img;
  try {
    jpeg_create_decompress(&cinfo);
    jpeg_stdio_src(&cinfo, file.get());
    jpeg_read_header(&cinfo, TRUE);
    cinfo.out_color_space = JCS_RGB;
    jpeg_start_decompress(&cinfo);
    img = Image(static_cast<int>(cinfo.output_height), static_cast<int>(cinfo.output_width));
    std::vector<unsigned char> row(std::size_t(cinfo.output_width) * 3);
    while (cinfo.output_scanline < cinfo.output_height) {
      const int r = static_cast<int>(cinfo.output_scanline);
      unsigned char* ptr = row.data();
      jpeg_read_scanlines(&cinfo, &ptr, 1);
      for (int c = 0; c < img.width; ++c)
        for (int ch = 0; ch < 3; ++ch) img.at(r, c)(ch) = row[std::size_t(c) * 3 + ch] / 255.0f;
    }
    jpeg_finish_decompress(&cinfo);
  } catch (...) {
    jpeg_destroy_decompress(&cinfo);
    throw;
  }
  jpeg_destroy_decompress(&cinfo);
  return img;
}

std::vector<std::string> data_lines(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    lines.push_back(line);
  }
  return lines;
}

[[noreturn]] void parse_error(const fs::path& file, std::size_t line, const std::string& what) {
  throw std::runtime_error(file.string() + ":" + std::to_string(line + 1) + ": " + what);
}

}  // namespace

Image read_image(const fs::path& path) {
  const std::string ext = lower_extension(path);
  if (ext == ".ppm") return read_ppm(path);
  if (ext == ".jpg" || ext == ".jpeg") return read_jpeg(path);
  throw std::runtime_error("unsupported image format: " + path.string());
}

void write_ppm(const fs::path& path, const Image& image) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "P6\n" << image.width << " " << image.height << "\n255\n";
  std::vector<unsigned char> raw(std::size_t(image.pixels.cols()) * 3);
  for (Eigen::Index j = 0; j < image.pixels.cols(); ++j)
    for (int c = 0; c < 3; ++c)
      raw[j * 3 + c] = static_cast<unsigned char>(
          std::lround(std::clamp(image.pixels(c, j), 0.0f, 1.0f) * 255.0f));
  out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

Image resize_image(const Image& image, int height, int width) {
  if (image.height == height && image.width == width) return image;
  Image out(height, width);
  const double sy = double(image.height) / height, sx = double(image.width) / width;
  for (int r = 0; r < height; ++r) {
    const double y = std::max(0.0, (r + 0.5) * sy - 0.5);
    const int y0 = std::min(static_cast<int>(y), image.height - 1);
    const int y1 = std::min(y0 + 1, image.height - 1);
    const float fy = static_cast<float>(y - y0);
    for (int c = 0; c < width; ++c) {
      const double x = std::max(0.0, (c + 0.5) * sx - 0.5);
      const int x0 = std::min(static_cast<int>(x), image.width - 1);
      const int x1 = std::min(x0 + 1, image.width - 1);
      const float fx = static_cast<float>(x - x0);
      out.at(r, c) = (1 - fy) * ((1 - fx) * image.at(y0, x0) + fx * image.at(y0, x1)) +
                     fy * ((1 - fx) * image.at(y1, x0) + fx * image.at(y1, x1));
    }
  }
  return out;
}

ImageSample resize_sample(const ImageSample& sample, int side) {
  ImageSample out = sample;
  const double sx = double(side) / sample.image.width, sy = double(side) / sample.image.height;
  out.image = resize_image(sample.image, side, side);
  if (out.keypoints)
    for (auto& k : *out.keypoints) {
      k.x = std::clamp(k.x * sx, 0.0, double(side));
      k.y = std::clamp(k.y * sy, 0.0, double(side));
    }
  if (out.bbox) {
    auto& b = *out.bbox;
    b = {std::clamp(b.x_min * sx, 0.0, double(side)), std::clamp(b.y_min * sy, 0.0, double(side)),
         std::clamp(b.x_max * sx, 0.0, double(side)), std::clamp(b.y_max * sy, 0.0, double(side))};
  }
  return out;
}

LoadedDataset load_dataset(const fs::path& root, int input_size) {
  const fs::path list_file = root / "images.txt";
  const auto list = data_lines(list_file);
  if (list.empty()) throw std::runtime_error(list_file.string() + ": no images listed");

  std::vector<ImageSample> samples(list.size());
  for (std::size_t i = 0; i < list.size(); ++i) {
    std::istringstream in(list[i]);
    std::string rel;
    int cls = -1;
    if (!(in >> rel >> cls) || cls < 0) parse_error(list_file, i, "expected '<relative_path> <class_id>'");
    samples[i].id = static_cast<int>(i);
    samples[i].class_id = cls;
    samples[i].image = read_image(root / rel);
  }

  int num_parts = 0;
  if (fs::exists(root / "dataset.json")) {
    std::ifstream in(root / "dataset.json");
    num_parts = nlohmann::json::parse(in).value("num_parts", 0);
  }

  const fs::path parts_file = root / "parts.txt";
  if (fs::exists(parts_file)) {
    struct Row { std::size_t image; int part; Keypoint kp; };
    std::vector<Row> rows;
    int max_part = 0;
    const auto lines = data_lines(parts_file);
    for (std::size_t i = 0; i < lines.size(); ++i) {
      std::istringstream in(lines[i]);
      long image = 0;
      int part = 0, visible = 0;
      double x = 0, y = 0;
      if (!(in >> image >> part >> x >> y >> visible) || image < 1 ||
          image > static_cast<long>(samples.size()) || part < 1 || (visible != 0 && visible != 1))
        parse_error(parts_file, i, "expected '<image_index> <part_id> <x> <y> <visible{0,1}>'");
      rows.push_back({std::size_t(image - 1), part, {x, y, visible == 1}});
      max_part = std::max(max_part, part);
    }
    if (num_parts == 0) num_parts = max_part;
    for (const Row& r : rows) {
      if (r.part > num_parts)
        throw std::runtime_error(parts_file.string() + ": part_id exceeds num_parts");
      auto& kps = samples[r.image].keypoints;
      if (!kps) kps.emplace(std::size_t(num_parts));
      (*kps)[std::size_t(r.part - 1)] = r.kp;
    }
  }

  const fs::path box_file = root / "bboxes.txt";
  if (fs::exists(box_file)) {
    const auto lines = data_lines(box_file);
    for (std::size_t i = 0; i < lines.size(); ++i) {
      std::istringstream in(lines[i]);
      long image = 0;
      double x = 0, y = 0, w = 0, h = 0;
      if (!(in >> image >> x >> y >> w >> h) || image < 1 ||
          image > static_cast<long>(samples.size()))
        parse_error(box_file, i, "expected '<image_index> <x_min> <y_min> <width> <height>'");
      samples[std::size_t(image - 1)].bbox = BoundingBox{x, y, x + w, y + h};
    }
  }

  LoadedDataset out;
  out.num_parts = num_parts;
  for (auto& s : samples) {
    validate(s);
    out.samples.push_back(std::make_shared<const ImageSample>(
        input_size > 0 ? resize_sample(s, input_size) : std::move(s)));
  }
  return out;
}

void write_dataset(const fs::path& root, const std::vector<SamplePtr>& samples, int num_parts) {
  fs::create_directories(root / "images");
  std::ofstream list(root / "images.txt"), parts(root / "parts.txt"), boxes(root / "bboxes.txt");
  if (!list || !parts || !boxes) throw std::runtime_error("cannot write dataset under " + root.string());
  parts << std::setprecision(17);
  boxes << std::setprecision(17);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const ImageSample& s = *samples[i];
    std::ostringstream name;
    name << "images/" << std::setw(3) << std::setfill('0') << s.class_id << "_" << std::setw(6)
         << std::setfill('0') << i + 1 << ".ppm";
    write_ppm(root / name.str(), s.image);
    list << name.str() << " " << s.class_id << "\n";
    if (s.keypoints)
      for (std::size_t p = 0; p < s.keypoints->size(); ++p) {
        const Keypoint& k = (*s.keypoints)[p];
        parts << i + 1 << " " << p + 1 << " " << k.x << " " << k.y << " " << (k.visible ? 1 : 0)
              << "\n";
      }
    if (s.bbox)
      boxes << i + 1 << " " << s.bbox->x_min << " " << s.bbox->y_min << " " << s.bbox->width()
            << " " << s.bbox->height() << "\n";
  }
  std::ofstream meta(root / "dataset.json");
  meta << nlohmann::json{{"num_parts", num_parts}, {"format_version", 1}}.dump(2) << "\n";
}

}  // namespace posenorm
