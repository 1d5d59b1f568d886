#include "mixnet/params.hpp"

#include <algorithm>
#include <iomanip>
#include <sstream>

namespace mixnet {

void ParamManifest::add(std::string name, Shape shape, std::size_t fan_in) {
  if (index_.count(name)) throw BuildError("duplicate parameter " + name);
  index_.emplace(name, specs_.size());
  specs_.push_back(ParamSpec{std::move(name), std::move(shape), fan_in});
}

std::size_t ParamManifest::total_count() const {
  std::size_t n = 0;
  for (const auto& s : specs_) n += s.shape.numel();
  return n;
}

const ParamSpec* ParamManifest::find(const std::string& name) const {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : &specs_[it->second];
}

std::string ParamManifest::table() const {
  std::size_t name_w = 4, shape_w = 5;
  for (const auto& s : specs_) {
    name_w = std::max(name_w, s.name.size());
    shape_w = std::max(shape_w, s.shape.str().size());
  }
  std::ostringstream os;
  os << std::left << std::setw(static_cast<int>(name_w)) << "name" << "  " << std::setw(static_cast<int>(shape_w))
     << "shape" << "  " << std::right << std::setw(10) << "count" << '\n';
  for (const auto& s : specs_)
    os << std::left << std::setw(static_cast<int>(name_w)) << s.name << "  " << std::setw(static_cast<int>(shape_w))
       << s.shape.str() << "  " << std::right << std::setw(10) << s.shape.numel() << '\n';
  os << std::left << std::setw(static_cast<int>(name_w)) << "total" << "  " << std::setw(static_cast<int>(shape_w))
     << "" << "  " << std::right << std::setw(10) << total_count() << '\n';
  return os.str();
}

bool operator==(const ParamManifest& a, const ParamManifest& b) {
  if (a.specs_.size() != b.specs_.size()) return false;
  for (std::size_t i = 0; i < a.specs_.size(); ++i) {
    const auto& x = a.specs_[i];
    const auto& y = b.specs_[i];
    if (x.name != y.name || !(x.shape == y.shape) || x.fan_in != y.fan_in) return false;
  }
  return true;
}

}  // namespace mixnet
