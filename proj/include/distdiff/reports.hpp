// Report emission: CSV tables and minimal static SVG plots (scatter and
// polylines) consumed by the command-line pipelines.
#pragma once

#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "distdiff/core.hpp"

namespace distdiff {

inline void write_text_file(const std::string& path,
                            const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  require(out.good(), ErrorCode::InvalidRequest,
          "write_text_file: cannot open " + path);
  out << content;
  require(out.good(), ErrorCode::InvalidRequest,
          "write_text_file: write failed " + path);
}

class CsvWriter {
 public:
  explicit CsvWriter(std::string header) { out_ << header << '\n'; }
  template <typename... Ts>
  void row(const Ts&... cells) {
    bool first = true;
    ((out_ << (first ? "" : ","), first = false, out_ << cells), ...);
    out_ << '\n';
  }
  std::string str() const { return out_.str(); }

 private:
  std::ostringstream out_;
};

/// Scatter/polyline SVG with auto-scaled viewport.
class SvgPlot {
 public:
  SvgPlot(int width = 640, int height = 640) : w_(width), h_(height) {}

  void add_points(const std::vector<Vec2>& pts, const std::string& color,
                  double radius = 2.0) {
    groups_.push_back({pts, color, radius, false});
  }
  void add_polyline(const std::vector<Vec2>& pts, const std::string& color) {
    groups_.push_back({pts, color, 1.0, true});
  }

  std::string str() const {
    double lo_x = 1e300, hi_x = -1e300, lo_y = 1e300, hi_y = -1e300;
    for (const auto& g : groups_)
      for (const auto& p : g.pts) {
        lo_x = std::min(lo_x, p.x);
        hi_x = std::max(hi_x, p.x);
        lo_y = std::min(lo_y, p.y);
        hi_y = std::max(hi_y, p.y);
      }
    if (lo_x > hi_x) lo_x = hi_x = lo_y = hi_y = 0;
    double span_x = std::max(hi_x - lo_x, 1e-12);
    double span_y = std::max(hi_y - lo_y, 1e-12);
    double margin = 20;
    auto sx = [&](double x) {
      return margin + (x - lo_x) / span_x * (w_ - 2 * margin);
    };
    auto sy = [&](double y) {
      return h_ - margin - (y - lo_y) / span_y * (h_ - 2 * margin);
    };
    std::ostringstream out;
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w_
        << "\" height=\"" << h_ << "\">\n";
    out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    for (const auto& g : groups_) {
      if (g.polyline) {
        out << "<polyline fill=\"none\" stroke=\"" << g.color
            << "\" stroke-width=\"1.2\" points=\"";
        for (const auto& p : g.pts) out << sx(p.x) << ',' << sy(p.y) << ' ';
        out << "\"/>\n";
      } else {
        for (const auto& p : g.pts)
          out << "<circle cx=\"" << sx(p.x) << "\" cy=\"" << sy(p.y)
              << "\" r=\"" << g.radius << "\" fill=\"" << g.color
              << "\"/>\n";
      }
    }
    out << "</svg>\n";
    return out.str();
  }

 private:
  struct Group {
    std::vector<Vec2> pts;
    std::string color;
    double radius;
    bool polyline;
  };
  int w_, h_;
  std::vector<Group> groups_;
};

}  // namespace distdiff
