#pragma once

#include <stdexcept>
#include <string>

namespace linf {

struct Error : std::runtime_error {
    explicit Error(const std::string &msg) : std::runtime_error(msg) {}
};

struct NonPositiveDepth : Error {
    explicit NonPositiveDepth(const std::string &msg = "point has non-positive depth") : Error(msg) {}
};

struct DisconnectedGraph : Error {
    explicit DisconnectedGraph(const std::string &msg = "covisibility graph is disconnected") : Error(msg) {}
};

struct MissingNode : Error {
    explicit MissingNode(const std::string &msg = "graph edge references unknown node") : Error(msg) {}
};

struct MissingRotation : Error {
    explicit MissingRotation(const std::string &msg = "no rotation solved for referenced frame") : Error(msg) {}
};

struct DegenerateConfiguration : Error {
    explicit DegenerateConfiguration(const std::string &msg = "degenerate configuration") : Error(msg) {}
};

struct TooFewInliers : Error {
    explicit TooFewInliers(const std::string &msg = "too few inliers / correspondences") : Error(msg) {}
};

struct AmbiguousCheirality : Error {
    explicit AmbiguousCheirality(const std::string &msg = "no essential decomposition wins a cheirality majority") : Error(msg) {}
};

struct InsufficientRays : Error {
    explicit InsufficientRays(const std::string &msg = "not enough ray pairs") : Error(msg) {}
};

struct NoEdgeToNewFrame : Error {
    explicit NoEdgeToNewFrame(const std::string &msg = "new frame has no edge into the solved set") : Error(msg) {}
};

struct NumericalFailure : Error {
    explicit NumericalFailure(const std::string &msg = "inner solver stalled") : Error(msg) {}
};

struct BadBracket : Error {
    explicit BadBracket(const std::string &msg = "upper gamma bracket is infeasible") : Error(msg) {}
};

struct ProbeViolatesLinear : Error {
    explicit ProbeViolatesLinear(const std::string &msg = "probe point violates a linear constraint") : Error(msg) {}
};

struct Infeasible : Error {
    explicit Infeasible(const std::string &msg = "problem is infeasible") : Error(msg) {}
};

struct UnderconstrainedTrack : Error {
    explicit UnderconstrainedTrack(const std::string &msg = "track observed by fewer than two solved frames") : Error(msg) {}
};

struct AllMeasurementsRemoved : Error {
    explicit AllMeasurementsRemoved(const std::string &msg = "outlier removal would empty the problem") : Error(msg) {}
};

struct AlphaOutOfRange : Error {
    explicit AlphaOutOfRange(const std::string &msg = "direction cone angle must lie in (0, pi/2)") : Error(msg) {}
};

struct DivergedOrStalled : Error {
    explicit DivergedOrStalled(const std::string &msg = "LM damping exceeded cap") : Error(msg) {}
};

struct CameraDisconnected : Error {
    explicit CameraDisconnected(const std::string &msg = "keyframe retains zero feature tracks") : Error(msg) {}
};

struct FrameMismatch : Error {
    explicit FrameMismatch(const std::string &msg = "estimate and ground truth cover different frames") : Error(msg) {}
};

struct BadParams : Error {
    explicit BadParams(const std::string &msg = "invalid generator parameters") : Error(msg) {}
};

struct IoError : Error {
    explicit IoError(const std::string &msg = "file I/O failure") : Error(msg) {}
};

}  // namespace linf
