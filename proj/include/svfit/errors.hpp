// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>

namespace svfit {

// Base class for all library errors.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class InvalidInput : public Error { public: using Error::Error; };
class RankOutOfRange : public Error { public: using Error::Error; };
class ConvergenceFailure : public Error { public: using Error::Error; };
class DimensionMismatch : public Error { public: using Error::Error; };
class InvalidRatio : public Error { public: using Error::Error; };
class NonFiniteGradient : public Error { public: using Error::Error; };
class NonFiniteActivation : public Error { public: using Error::Error; };
class MissingTensor : public Error { public: using Error::Error; };
class StaleTrace : public Error { public: using Error::Error; };
class InvalidConfig : public Error { public: using Error::Error; };
class MergeDiscrepancy : public Error { public: using Error::Error; };

// I/O errors. BadMagic etc. derive from IoError so callers can catch the
// whole family at the file boundary.
class IoError : public Error { public: using Error::Error; };
class BadMagic : public IoError { public: using IoError::IoError; };
class UnsupportedVersion : public IoError { public: using IoError::IoError; };
class TruncatedPayload : public IoError { public: using IoError::IoError; };
class DuplicateName : public IoError { public: using IoError::IoError; };
class ChecksumError : public IoError { public: using IoError::IoError; };
class BadFormat : public IoError { public: using IoError::IoError; };
class UnsupportedMaxval : public IoError { public: using IoError::IoError; };

} // namespace svfit
