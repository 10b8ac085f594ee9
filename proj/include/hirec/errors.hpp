#pragma once

#include <stdexcept>
#include <string>

namespace hirec {

/// Broad failure classes. The CLI maps these onto its exit codes.
enum class ErrorClass { input, backend, empty_state, generation };

class Error : public std::runtime_error {
 public:
  Error(ErrorClass cls, const std::string& what) : std::runtime_error(what), cls_(cls) {}
  ErrorClass error_class() const noexcept { return cls_; }

 private:
  ErrorClass cls_;
};

class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line = 0)
      : Error(ErrorClass::input, line ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class DuplicateDocId : public Error {
 public:
  explicit DuplicateDocId(const std::string& id)
      : Error(ErrorClass::input, "duplicate doc_id: " + id), doc_id_(id) {}
  const std::string& doc_id() const noexcept { return doc_id_; }

 private:
  std::string doc_id_;
};

class EmptyCorpus : public Error {
 public:
  explicit EmptyCorpus(const std::string& what = "corpus is empty") : Error(ErrorClass::empty_state, what) {}
};

class EmptyDocument : public Error {
 public:
  explicit EmptyDocument(const std::string& doc_id)
      : Error(ErrorClass::empty_state, "document has no text: " + doc_id) {}
};

class BackendUnavailable : public Error {
 public:
  explicit BackendUnavailable(const std::string& what) : Error(ErrorClass::backend, what) {}
};

class DimensionMismatch : public Error {
 public:
  DimensionMismatch(std::size_t expected, std::size_t got)
      : Error(ErrorClass::backend, "embedding dimension mismatch: expected " + std::to_string(expected) +
                                       ", got " + std::to_string(got)) {}
};

class MalformedResponse : public Error {
 public:
  explicit MalformedResponse(const std::string& what) : Error(ErrorClass::backend, what) {}
};

class EmptyResponse : public Error {
 public:
  explicit EmptyResponse(const std::string& what) : Error(ErrorClass::backend, what) {}
};

class GenerationFailed : public Error {
 public:
  explicit GenerationFailed(const std::string& what) : Error(ErrorClass::backend, what) {}
};

class ExecutionFailed : public Error {
 public:
  explicit ExecutionFailed(const std::string& what) : Error(ErrorClass::generation, what) {}
};

}  // namespace hirec
