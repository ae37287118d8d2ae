#pragma once

#include "prodmap/assignment.hpp"
#include "prodmap/eigs.hpp"
#include "prodmap/evaluate.hpp"
#include "prodmap/fem.hpp"
#include "prodmap/io.hpp"
#include "prodmap/localize.hpp"
#include "prodmap/maps.hpp"
#include "prodmap/mesh.hpp"
#include "prodmap/product.hpp"
#include "prodmap/refine.hpp"
#include "prodmap/synthetic.hpp"
