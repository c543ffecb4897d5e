#pragma once

#include "fieldforge/diagnostics.hpp"
#include "fieldforge/mesh.hpp"
#include "fieldforge/model.hpp"
#include "fieldforge/sparse.hpp"
#include "fieldforge/parallel.hpp"
#include "fieldforge/femcore.hpp"
#include "fieldforge/msh_io.hpp"
#include "fieldforge/problem.hpp"
#include "fieldforge/postproc.hpp"
#include "fieldforge/solvers.hpp"
