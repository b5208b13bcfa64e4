#pragma once

#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace trellis {

// Base for every engine error. Catch this to handle anything trellis throws.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// Transport-level failure after the retry budget is exhausted.
class RemoteUnavailable : public Error {
public:
    using Error::Error;
};

// The endpoint answered but the body is not a usable chat-completion
// response (bad JSON, missing fields, score out of range).
class ProtocolError : public Error {
public:
    using Error::Error;
};

// Unknown template id or a placeholder left unresolved after substitution.
class TemplateError : public Error {
public:
    using Error::Error;
};

// A critique call failed mid-batch; carries the scores gathered so far.
class ScoringError : public Error {
public:
    ScoringError(const std::string& what, std::vector<double> partial)
        : Error(what), partial_scores(std::move(partial)) {}
    std::vector<double> partial_scores;
};

// Every actor in the pool failed to produce a candidate.
class ExpansionError : public Error {
public:
    using Error::Error;
};

class InsufficientSamples : public Error {
public:
    using Error::Error;
};

class EmptyCorpus : public Error {
public:
    using Error::Error;
};

// Critique list does not line up with the trajectory's steps.
class AlignmentError : public Error {
public:
    using Error::Error;
};

// The rewriter returned the original step unchanged.
class InjectionFailed : public Error {
public:
    using Error::Error;
};

class SegmentationError : public Error {
public:
    using Error::Error;
};

class ExportError : public Error {
public:
    using Error::Error;
};

// Every candidate slot of a best-of-n batch failed.
class SamplingError : public Error {
public:
    using Error::Error;
};

// Bad or incomplete run configuration; message names the offending key/path.
class ConfigError : public Error {
public:
    using Error::Error;
};

} // namespace trellis
