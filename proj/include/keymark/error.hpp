#pragma once

#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace keymark {

// Root of every error the library raises. Each named failure mode gets its own
// subclass so callers (and the pipeline's failure taxonomy) can dispatch on type.
struct Error : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

#define KEYMARK_DEFINE_ERROR(Name)        \
  struct Name : public Error {            \
    using Error::Error;                   \
  }

// geometry
KEYMARK_DEFINE_ERROR(EmptyMask);
KEYMARK_DEFINE_ERROR(DegenerateContour);
KEYMARK_DEFINE_ERROR(InvalidDepth);
KEYMARK_DEFINE_ERROR(BehindCamera);
KEYMARK_DEFINE_ERROR(NoGraspFound);
KEYMARK_DEFINE_ERROR(EmptyProposalSet);
KEYMARK_DEFINE_ERROR(InvalidCamera);

// marks
KEYMARK_DEFINE_ERROR(TileOutOfRange);
KEYMARK_DEFINE_ERROR(MalformedTile);
KEYMARK_DEFINE_ERROR(DimensionMismatch);

// prompts
KEYMARK_DEFINE_ERROR(MarkMismatch);
KEYMARK_DEFINE_ERROR(MalformedJson);
KEYMARK_DEFINE_ERROR(EmptyPlan);
KEYMARK_DEFINE_ERROR(ConsistencyViolation);

// vlm
KEYMARK_DEFINE_ERROR(Timeout);
KEYMARK_DEFINE_ERROR(TransportError);

// motion
KEYMARK_DEFINE_ERROR(MissingPoints);
KEYMARK_DEFINE_ERROR(DegenerateAxis);
KEYMARK_DEFINE_ERROR(PathTooLong);

// sim
KEYMARK_DEFINE_ERROR(StageStepLimitExceeded);
KEYMARK_DEFINE_ERROR(SceneError);

// pipeline
KEYMARK_DEFINE_ERROR(ReasoningFailure);
KEYMARK_DEFINE_ERROR(ExecutionFailure);
KEYMARK_DEFINE_ERROR(ConfigError);
KEYMARK_DEFINE_ERROR(IoError);

#undef KEYMARK_DEFINE_ERROR

// Selection referenced a label that is not on the annotated image. The valid
// labels travel with the error so they can be fed back into a VLM retry.
struct UnknownLabel : public Error {
  UnknownLabel(std::string label_, std::vector<std::string> valid_)
      : Error(format(label_, valid_)), label(std::move(label_)), valid(std::move(valid_)) {}

  std::string label;
  std::vector<std::string> valid;

 private:
  static std::string format(const std::string& label, const std::vector<std::string>& valid) {
    std::string msg = "unknown label \"" + label + "\"; valid labels are [";
    for (std::size_t i = 0; i < valid.size(); ++i) {
      if (i) msg += ", ";
      msg += valid[i];
    }
    return msg + "]";
  }
};

struct MissingField : public Error {
  explicit MissingField(std::string name)
      : Error("missing required field \"" + name + "\""), field(std::move(name)) {}
  std::string field;
};

struct InvalidOption : public Error {
  InvalidOption(std::string field_, const std::string& detail)
      : Error("invalid value for \"" + field_ + "\": " + detail), field(std::move(field_)) {}
  std::string field;
};

struct ApiError : public Error {
  ApiError(int status_, std::string body_)
      : Error("VLM endpoint returned HTTP " + std::to_string(status_) + ": " + body_),
        status(status_),
        body(std::move(body_)) {}
  int status;
  std::string body;
};

}  // namespace keymark
