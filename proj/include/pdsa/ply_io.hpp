#pragma once

#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "pdsa/point_cloud.hpp"

namespace pdsa {

/// ASCII PLY subset: a single `element vertex N` with properties x,y,z,
/// optionally followed by `label` (int) and `heat` (real), in that order.
struct CloudFile {
  PointCloud cloud;
  std::vector<double> heat;
  bool has_label = false;
  bool has_heat = false;
};

namespace detail {

[[noreturn]] inline void ply_fail(const std::string& path, int line, const std::string& why) {
  throw std::runtime_error("read_cloud: " + path + ":" + std::to_string(line) + ": " + why);
}

inline std::string fmt_g9(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

}  // namespace detail

/// Writes the cloud atomically (temp file + rename). The label column is
/// emitted when the cloud has labels; the heat column when `heat` is given.
inline void write_cloud(const std::string& path, const PointCloud& cloud,
                        const std::vector<double>* heat = nullptr) {
  const bool with_label = !cloud.labels.empty();
  if (with_label && cloud.labels.size() != cloud.size())
    throw std::invalid_argument("write_cloud: label count does not match point count");
  if (heat && heat->size() != cloud.size())
    throw std::invalid_argument("write_cloud: heat count does not match point count");

  std::ostringstream os;
  os << "ply\nformat ascii 1.0\nelement vertex " << cloud.size()
     << "\nproperty float x\nproperty float y\nproperty float z\n";
  if (with_label) os << "property int label\n";
  if (heat) os << "property float heat\n";
  os << "end_header\n";
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const Vec3& p = cloud.coords[i];
    os << detail::fmt_g9(p[0]) << ' ' << detail::fmt_g9(p[1]) << ' ' << detail::fmt_g9(p[2]);
    if (with_label) os << ' ' << cloud.labels[i];
    if (heat) os << ' ' << detail::fmt_g9((*heat)[i]);
    os << '\n';
  }

  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::trunc);
    if (!f) throw std::runtime_error("write_cloud: cannot open '" + tmp + "'");
    f << os.str();
    if (!f) throw std::runtime_error("write_cloud: write failed for '" + tmp + "'");
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw std::runtime_error("write_cloud: rename to '" + path + "' failed");
}

inline CloudFile read_cloud(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("read_cloud: cannot open '" + path + "'");

  CloudFile out;
  int line_no = 0;
  std::string line;
  auto next_line = [&](const char* what) {
    if (!std::getline(f, line)) detail::ply_fail(path, line_no + 1, std::string("missing ") + what);
    ++line_no;
    while (!line.empty() && (line.back() == '\r' || line.back() == '\n')) line.pop_back();
  };

  next_line("ply magic");
  if (line != "ply") detail::ply_fail(path, line_no, "not a PLY file");
  next_line("format line");
  if (line != "format ascii 1.0") detail::ply_fail(path, line_no, "unsupported format '" + line + "'");

  long n_vertices = -1;
  std::vector<std::string> props;
  for (;;) {
    next_line("end_header");
    if (line == "end_header") break;
    std::istringstream is(line);
    std::string tok;
    is >> tok;
    if (tok == "comment") continue;
    if (tok == "element") {
      std::string name;
      is >> name >> n_vertices;
      if (name != "vertex" || is.fail() || n_vertices < 0)
        detail::ply_fail(path, line_no, "unsupported element '" + line + "'");
      continue;
    }
    if (tok == "property") {
      std::string type, name;
      is >> type >> name;
      if (is.fail()) detail::ply_fail(path, line_no, "malformed property '" + line + "'");
      const bool real_t = type == "float" || type == "double";
      const bool int_t = type == "int" || type == "uint" || type == "uchar" || type == "short";
      if (name == "x" || name == "y" || name == "z" || name == "heat") {
        if (!real_t) detail::ply_fail(path, line_no, "property '" + name + "' must be real-typed");
      } else if (name == "label") {
        if (!int_t) detail::ply_fail(path, line_no, "property 'label' must be integer-typed");
      } else {
        detail::ply_fail(path, line_no, "unsupported property '" + name + "'");
      }
      props.push_back(name);
      continue;
    }
    detail::ply_fail(path, line_no, "unexpected header line '" + line + "'");
  }
  if (n_vertices < 0) detail::ply_fail(path, line_no, "missing 'element vertex' declaration");
  const std::vector<std::string> base = {"x", "y", "z"};
  if (props.size() < 3 || !std::equal(base.begin(), base.end(), props.begin()))
    detail::ply_fail(path, line_no, "vertex properties must start with x y z");
  for (std::size_t i = 3; i < props.size(); ++i) {
    const bool ok = (props[i] == "label" && i == 3) ||
                    (props[i] == "heat" && i == props.size() - 1 && i <= 4);
    if (!ok) detail::ply_fail(path, line_no, "unsupported property order");
  }
  out.has_label = props.size() > 3 && props[3] == "label";
  out.has_heat = props.back() == "heat" && props.size() > 3;

  out.cloud.coords.reserve(static_cast<std::size_t>(n_vertices));
  for (long i = 0; i < n_vertices; ++i) {
    if (!std::getline(f, line)) {
      throw std::runtime_error("read_cloud: " + path + ": expected " + std::to_string(n_vertices) +
                               " vertex rows, found " + std::to_string(i) + " (line " +
                               std::to_string(line_no + 1) + ")");
    }
    ++line_no;
    std::istringstream is(line);
    Vec3 p;
    is >> p[0] >> p[1] >> p[2];
    if (is.fail()) detail::ply_fail(path, line_no, "malformed vertex row");
    out.cloud.coords.push_back(p);
    if (out.has_label) {
      int lab;
      is >> lab;
      if (is.fail()) detail::ply_fail(path, line_no, "missing label value");
      out.cloud.labels.push_back(lab);
    }
    if (out.has_heat) {
      double h;
      is >> h;
      if (is.fail()) detail::ply_fail(path, line_no, "missing heat value");
      out.heat.push_back(h);
    }
  }
  return out;
}

}  // namespace pdsa
