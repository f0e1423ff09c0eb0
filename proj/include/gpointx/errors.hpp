#ifndef GPOINTX_ERRORS_HPP_
#define GPOINTX_ERRORS_HPP_

#include <stdexcept>
#include <string>

namespace gpx {

struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

#define GPX_DEFINE_ERROR(Name)                                  \
  struct Name : Error {                                         \
    explicit Name(const std::string& msg) : Error(msg) {}       \
  }

GPX_DEFINE_ERROR(UnknownGroup);
GPX_DEFINE_ERROR(GroupConstructionFailure);
GPX_DEFINE_ERROR(GroupMismatch);
GPX_DEFINE_ERROR(IndexError);
GPX_DEFINE_ERROR(NonFiniteValue);
GPX_DEFINE_ERROR(ShapeError);
GPX_DEFINE_ERROR(EmptyReduction);
GPX_DEFINE_ERROR(LabelError);
GPX_DEFINE_ERROR(SampleTooLarge);
GPX_DEFINE_ERROR(NeighborhoodTooLarge);
GPX_DEFINE_ERROR(PermutationError);
GPX_DEFINE_ERROR(ParseError);
GPX_DEFINE_ERROR(DegenerateMesh);
GPX_DEFINE_ERROR(ConfigError);
GPX_DEFINE_ERROR(DivergenceError);

#undef GPX_DEFINE_ERROR

}  // namespace gpx

#endif  // GPOINTX_ERRORS_HPP_
