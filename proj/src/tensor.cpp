#include "siam/tensor.hpp"

#include <sstream>

namespace siam {

const char* to_string(ParseErrorKind kind) {
  switch (kind) {
    case ParseErrorKind::BadMagic: return "bad magic";
    case ParseErrorKind::UnsupportedVersion: return "unsupported version";
    case ParseErrorKind::UnsupportedDtype: return "unsupported dtype";
    case ParseErrorKind::Truncated: return "truncated";
    case ParseErrorKind::BadExtents: return "bad extents";
    case ParseErrorKind::TrailingBytes: return "trailing bytes";
    case ParseErrorKind::NonFinite: return "non-finite value";
    case ParseErrorKind::Io: return "io error";
  }
  return "parse error";
}

Index numel(const Shape& shape) {
  Index n = 1;
  for (Index e : shape) n *= e;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

void check_shape(const Shape& shape) {
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (shape[i] <= 0) {
      throw ShapeError("extent of axis " + std::to_string(i) + " must be positive in " + to_string(shape));
    }
  }
}

Shape strides_of(const Shape& shape) {
  Shape strides(shape.size(), 1);
  for (std::size_t i = shape.size(); i-- > 1;) strides[i - 1] = strides[i] * shape[i];
  return strides;
}

}  // namespace siam
