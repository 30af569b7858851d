#pragma once

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "tirtrack/coord_vocab.hpp"
#include "tirtrack/image.hpp"
#include "tirtrack/metrics.hpp"

// On-disk formats: 8-bit PGM frames named 0001.pgm, 0002.pgm, ...; box files
// with one `x,y,w,h[,score]` line per frame in 1-indexed pixel coordinates.

namespace tirtrack {

class MissingFileError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class MalformedInputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

inline std::ifstream open_or_throw(const std::string& path, std::ios::openmode mode = std::ios::in) {
  if (!std::filesystem::exists(path)) throw MissingFileError("missing file: " + path);
  std::ifstream is(path, mode);
  if (!is) throw MissingFileError("cannot open: " + path);
  return is;
}

// Next PGM header token, skipping whitespace and # comments.
inline std::string pgm_token(std::istream& is) {
  std::string tok;
  int c;
  while ((c = is.get()) != EOF) {
    if (c == '#') {
      while ((c = is.get()) != EOF && c != '\n') {}
      continue;
    }
    if (std::isspace(c)) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(char(c));
  }
  return tok;
}

inline std::string fmt_num(double v) {
  std::ostringstream os;
  os << std::setprecision(10) << v;
  return os.str();
}

}  // namespace detail

/// Reads binary (P5) or ASCII (P2) 8-bit greyscale PGM.
inline Image read_pgm(const std::string& path) {
  auto is = detail::open_or_throw(path, std::ios::binary);
  const std::string magic = detail::pgm_token(is);
  if (magic != "P5" && magic != "P2") throw MalformedInputError("not a PGM file: " + path);
  std::size_t w = 0, h = 0, maxval = 0;
  try {
    w = std::stoul(detail::pgm_token(is));
    h = std::stoul(detail::pgm_token(is));
    maxval = std::stoul(detail::pgm_token(is));
  } catch (const std::exception&) {
    throw MalformedInputError("bad PGM header: " + path);
  }
  if (w == 0 || h == 0 || maxval == 0 || maxval > 255) {
    throw MalformedInputError("unsupported PGM geometry/depth: " + path);
  }
  Image img(w, h);
  if (magic == "P5") {
    std::vector<unsigned char> buf(w * h);
    if (!is.read(reinterpret_cast<char*>(buf.data()), std::streamsize(buf.size()))) {
      throw MalformedInputError("truncated PGM data: " + path);
    }
    for (std::size_t i = 0; i < buf.size(); ++i) img.pixels[i] = double(buf[i]) * 255.0 / double(maxval);
  } else {
    for (double& p : img.pixels) {
      int v;
      if (!(is >> v)) throw MalformedInputError("truncated PGM data: " + path);
      p = double(v) * 255.0 / double(maxval);
    }
  }
  return img;
}

inline void write_pgm(const std::string& path, const Image& img) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write: " + path);
  os << "P5\n" << img.width << ' ' << img.height << "\n255\n";
  std::vector<unsigned char> buf(img.pixels.size());
  for (std::size_t i = 0; i < buf.size(); ++i)
    buf[i] = static_cast<unsigned char>(std::clamp(std::round(img.pixels[i]), 0.0, 255.0));
  os.write(reinterpret_cast<const char*>(buf.data()), std::streamsize(buf.size()));
}

struct BoxRecord {
  BBox box;
  double score = 1.0;
};

/// Parses `x,y,w,h[,score]` lines (commas, tabs or spaces). Coordinates in
/// the file are 1-indexed; returned boxes are 0-indexed image pixels.
inline std::vector<BoxRecord> read_box_file(const std::string& path) {
  auto is = detail::open_or_throw(path);
  std::vector<BoxRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    std::replace(line.begin(), line.end(), ',', ' ');
    std::replace(line.begin(), line.end(), '\t', ' ');
    std::istringstream ls(line);
    std::vector<double> v;
    double x;
    while (ls >> x) v.push_back(x);
    if (!ls.eof()) throw MalformedInputError(path + ":" + std::to_string(lineno) + ": not numeric");
    if (v.empty()) continue;
    if (v.size() != 4 && v.size() != 5) {
      throw MalformedInputError(path + ":" + std::to_string(lineno) + ": expected 4 or 5 values");
    }
    BoxRecord r;
    r.box = {v[0] - 1.0, v[1] - 1.0, v[2], v[3], BoxFrame::kImagePx};
    if (!r.box.valid()) {
      throw MalformedInputError(path + ":" + std::to_string(lineno) + ": non-positive extent");
    }
    if (v.size() == 5) r.score = v[4];
    out.push_back(r);
  }
  return out;
}

inline std::vector<BBox> boxes_of(const std::vector<BoxRecord>& recs) {
  std::vector<BBox> out;
  for (const auto& r : recs) out.push_back(r.box);
  return out;
}

inline void write_box_file(const std::string& path, const std::vector<BBox>& boxes,
                           const std::vector<double>* scores = nullptr) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write: " + path);
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    const BBox& b = boxes[i];
    os << detail::fmt_num(b.x + 1.0) << ',' << detail::fmt_num(b.y + 1.0) << ','
       << detail::fmt_num(b.w) << ',' << detail::fmt_num(b.h);
    if (scores) os << ',' << detail::fmt_num((*scores)[i]);
    os << '\n';
  }
}

inline std::string frame_name(std::size_t index_one_based) {
  std::ostringstream os;
  os << std::setw(4) << std::setfill('0') << index_one_based << ".pgm";
  return os.str();
}

struct SequenceData {
  std::vector<Image> frames;
  std::vector<BBox> ground_truth;
};

/// Loads 0001.pgm, 0002.pgm, ... (contiguous) and groundtruth_rect.txt.
inline SequenceData load_sequence(const std::string& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw MissingFileError("missing sequence directory: " + dir);
  std::vector<std::string> names;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.path().extension() == ".pgm") names.push_back(e.path().filename().string());
  }
  std::sort(names.begin(), names.end());
  if (names.empty()) throw MalformedInputError("no .pgm frames in " + dir);
  SequenceData seq;
  for (std::size_t i = 0; i < names.size(); ++i) {
    const fs::path p = fs::path(dir) / frame_name(i + 1);
    if (!fs::exists(p)) throw MalformedInputError("frame numbering gap: expected " + p.string());
    seq.frames.push_back(read_pgm(p.string()));
    if (seq.frames.back().width != seq.frames.front().width ||
        seq.frames.back().height != seq.frames.front().height) {
      throw MalformedInputError("frame size changes at " + p.string());
    }
  }
  seq.ground_truth = boxes_of(read_box_file((fs::path(dir) / "groundtruth_rect.txt").string()));
  if (seq.ground_truth.empty()) throw MalformedInputError("empty groundtruth_rect.txt in " + dir);
  return seq;
}

inline void save_sequence(const std::string& dir, const std::vector<Image>& frames,
                          const std::vector<BBox>& boxes) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  for (std::size_t i = 0; i < frames.size(); ++i)
    write_pgm((fs::path(dir) / frame_name(i + 1)).string(), frames[i]);
  write_box_file((fs::path(dir) / "groundtruth_rect.txt").string(), boxes);
}

/// `key = value` summary followed by one `frame iou center_error
/// norm_center_error` row per frame.
inline void write_report(const std::string& path, const MetricReport& r) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write: " + path);
  os << std::setprecision(17);
  os << "suc = " << r.suc << '\n'
     << "pre = " << r.pre << '\n'
     << "normp = " << r.normp << '\n'
     << "frames = " << r.ious.size() << '\n'
     << "# frame iou center_error norm_center_error\n";
  for (std::size_t i = 0; i < r.ious.size(); ++i)
    os << i + 1 << ' ' << r.ious[i] << ' ' << r.center_errors[i] << ' ' << r.norm_center_errors[i] << '\n';
}

}  // namespace tirtrack
