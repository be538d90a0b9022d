/*
 * FMI 3.0 co-simulation entry points forwarding to vpfmu.fmi3api.
 *
 * The CPython API is resolved with dlsym at first use. Inside a Python
 * process (e.g. loaded through ctypes) the running interpreter is reused;
 * in any other host libpython is loaded and initialized on demand.
 *
 * Build-time defines:
 *   VPFMU_LIBPYTHON  path of libpython to dlopen when the host has none
 *   VPFMU_SYSPATH    directory prepended to sys.path (where vpfmu lives)
 */

#define _GNU_SOURCE
#include <dlfcn.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdio.h>
#include <string.h>

#ifndef VPFMU_LIBPYTHON
#define VPFMU_LIBPYTHON "libpython3.so"
#endif
#ifndef VPFMU_SYSPATH
#define VPFMU_SYSPATH ""
#endif

#define EXPORT __attribute__((visibility("default")))

typedef void *fmi3Instance;
typedef void *fmi3InstanceEnvironment;
typedef bool fmi3Boolean;
typedef double fmi3Float64;
typedef float fmi3Float32;
typedef uint32_t fmi3UInt32;
typedef uint32_t fmi3ValueReference;
typedef const char *fmi3String;

typedef enum {
    fmi3OK,
    fmi3Warning,
    fmi3Discard,
    fmi3Error,
    fmi3Fatal
} fmi3Status;

typedef void (*fmi3LogMessageCallback)(fmi3InstanceEnvironment, fmi3Status,
                                       fmi3String, fmi3String);
typedef void *fmi3IntermediateUpdateCallback;
typedef void *fmi3ClockUpdateCallback;
typedef void *fmi3LockPreemptionCallback;
typedef void *fmi3UnlockPreemptionCallback;

/* --- CPython, resolved at runtime ------------------------------------- */

typedef struct _object PyObject;
typedef int PyGILState_STATE;

static int (*py_IsInitialized)(void);
static void (*py_InitializeEx)(int);
static PyGILState_STATE (*py_GILState_Ensure)(void);
static void (*py_GILState_Release)(PyGILState_STATE);
static void *(*py_Eval_SaveThread)(void);
static PyObject *(*py_Import_ImportModule)(const char *);
static PyObject *(*py_Object_GetAttrString)(PyObject *, const char *);
static PyObject *(*py_Object_CallFunction)(PyObject *, const char *, ...);
static long long (*py_Long_AsLongLong)(PyObject *);
static void (*py_DecRef)(PyObject *);
static void (*py_Err_Print)(void);
static PyObject *(*py_Err_Occurred)(void);
static int (*py_Run_SimpleString)(const char *);

static PyObject *dispatch_fn = NULL;
static int python_state = 0; /* 0 = untried, 1 = ready, -1 = failed */

static void *resolve(void *lib, const char *name)
{
    void *sym = dlsym(RTLD_DEFAULT, name);
    if (!sym && lib)
        sym = dlsym(lib, name);
    if (!sym)
        fprintf(stderr, "vpfmu: missing Python symbol %s\n", name);
    return sym;
}

static int bind_python(void)
{
    void *lib = NULL;
    if (!dlsym(RTLD_DEFAULT, "Py_IsInitialized")) {
        lib = dlopen(VPFMU_LIBPYTHON, RTLD_NOW | RTLD_GLOBAL);
        if (!lib) {
            fprintf(stderr, "vpfmu: cannot load %s: %s\n", VPFMU_LIBPYTHON, dlerror());
            return -1;
        }
    }
#define BIND(var, name)                              \
    do {                                             \
        *(void **)(&var) = resolve(lib, name);       \
        if (!var)                                    \
            return -1;                               \
    } while (0)
    BIND(py_IsInitialized, "Py_IsInitialized");
    BIND(py_InitializeEx, "Py_InitializeEx");
    BIND(py_GILState_Ensure, "PyGILState_Ensure");
    BIND(py_GILState_Release, "PyGILState_Release");
    BIND(py_Eval_SaveThread, "PyEval_SaveThread");
    BIND(py_Import_ImportModule, "PyImport_ImportModule");
    BIND(py_Object_GetAttrString, "PyObject_GetAttrString");
    BIND(py_Object_CallFunction, "PyObject_CallFunction");
    BIND(py_Long_AsLongLong, "PyLong_AsLongLong");
    BIND(py_DecRef, "Py_DecRef");
    BIND(py_Err_Print, "PyErr_Print");
    BIND(py_Err_Occurred, "PyErr_Occurred");
    BIND(py_Run_SimpleString, "PyRun_SimpleString");
#undef BIND
    return 0;
}

/* Returns with the GIL held on success. */
static int enter_python(PyGILState_STATE *gil)
{
    if (python_state == 0) {
        python_state = -1;
        if (bind_python() != 0)
            return -1;
        int owner = !py_IsInitialized();
        if (owner)
            py_InitializeEx(0);
        else
            *gil = py_GILState_Ensure();
        if (VPFMU_SYSPATH[0]) {
            char code[4096];
            snprintf(code, sizeof code,
                     "import sys\nif %s not in sys.path: sys.path.insert(0, %s)\n",
                     "'" VPFMU_SYSPATH "'", "'" VPFMU_SYSPATH "'");
            py_Run_SimpleString(code);
        }
        PyObject *mod = py_Import_ImportModule("vpfmu.fmi3api");
        if (mod) {
            dispatch_fn = py_Object_GetAttrString(mod, "dispatch");
            py_DecRef(mod);
        }
        if (!dispatch_fn)
            py_Err_Print();
        if (owner)
            py_Eval_SaveThread();
        else
            py_GILState_Release(*gil);
        if (!dispatch_fn)
            return -1;
        python_state = 1;
    }
    if (python_state != 1)
        return -1;
    *gil = py_GILState_Ensure();
    return 0;
}

static long long finish_call(PyObject *result, long long fallback)
{
    long long value = fallback;
    if (result) {
        value = py_Long_AsLongLong(result);
        py_DecRef(result);
    }
    if (py_Err_Occurred()) {
        py_Err_Print();
        value = fallback;
    }
    return value;
}

#define CALL(fallback, fmt, ...)                                              \
    ({                                                                        \
        PyGILState_STATE gil_;                                                \
        long long rv_ = (fallback);                                           \
        if (enter_python(&gil_) == 0) {                                       \
            rv_ = finish_call(py_Object_CallFunction(dispatch_fn, fmt,        \
                                                     __VA_ARGS__), fallback); \
            py_GILState_Release(gil_);                                        \
        }                                                                     \
        rv_;                                                                  \
    })

#define HANDLE(inst) ((unsigned long long)(uintptr_t)(inst))
#define PTR(p) ((unsigned long long)(uintptr_t)(p))

/* --- inquiry ------------------------------------------------------------ */

EXPORT const char *fmi3GetVersion(void)
{
    return "3.0";
}

EXPORT fmi3Status fmi3SetDebugLogging(fmi3Instance instance, fmi3Boolean loggingOn,
                                      size_t nCategories, const fmi3String categories[])
{
    (void)instance; (void)loggingOn; (void)nCategories; (void)categories;
    return fmi3OK;
}

/* --- creation and destruction --------------------------------------------- */

EXPORT fmi3Instance fmi3InstantiateCoSimulation(
    fmi3String instanceName, fmi3String instantiationToken, fmi3String resourcePath,
    fmi3Boolean visible, fmi3Boolean loggingOn, fmi3Boolean eventModeUsed,
    fmi3Boolean earlyReturnAllowed, const fmi3ValueReference requiredIntermediateVariables[],
    size_t nRequiredIntermediateVariables, fmi3InstanceEnvironment instanceEnvironment,
    fmi3LogMessageCallback logMessage, fmi3IntermediateUpdateCallback intermediateUpdate)
{
    (void)visible; (void)loggingOn; (void)earlyReturnAllowed;
    (void)requiredIntermediateVariables; (void)nRequiredIntermediateVariables;
    (void)intermediateUpdate;
    if (eventModeUsed)
        return NULL;
    long long h = CALL(0, "sssKK", "instantiate",
                       instanceName ? instanceName : "",
                       resourcePath ? resourcePath : "",
                       PTR(logMessage), PTR(instanceEnvironment));
    (void)instantiationToken;
    return h > 0 ? (fmi3Instance)(uintptr_t)h : NULL;
}

EXPORT fmi3Instance fmi3InstantiateModelExchange(
    fmi3String instanceName, fmi3String instantiationToken, fmi3String resourcePath,
    fmi3Boolean visible, fmi3Boolean loggingOn, fmi3InstanceEnvironment instanceEnvironment,
    fmi3LogMessageCallback logMessage)
{
    (void)instanceName; (void)instantiationToken; (void)resourcePath; (void)visible;
    (void)loggingOn; (void)instanceEnvironment; (void)logMessage;
    return NULL;
}

EXPORT fmi3Instance fmi3InstantiateScheduledExecution(
    fmi3String instanceName, fmi3String instantiationToken, fmi3String resourcePath,
    fmi3Boolean visible, fmi3Boolean loggingOn, fmi3InstanceEnvironment instanceEnvironment,
    fmi3LogMessageCallback logMessage, fmi3ClockUpdateCallback clockUpdate,
    fmi3LockPreemptionCallback lockPreemption, fmi3UnlockPreemptionCallback unlockPreemption)
{
    (void)instanceName; (void)instantiationToken; (void)resourcePath; (void)visible;
    (void)loggingOn; (void)instanceEnvironment; (void)logMessage; (void)clockUpdate;
    (void)lockPreemption; (void)unlockPreemption;
    return NULL;
}

EXPORT void fmi3FreeInstance(fmi3Instance instance)
{
    if (instance)
        CALL(fmi3Error, "sK", "free", HANDLE(instance));
}

/* --- initialization --------------------------------------------------------- */

EXPORT fmi3Status fmi3EnterInitializationMode(fmi3Instance instance,
                                              fmi3Boolean toleranceDefined,
                                              fmi3Float64 tolerance, fmi3Float64 startTime,
                                              fmi3Boolean stopTimeDefined,
                                              fmi3Float64 stopTime)
{
    (void)toleranceDefined; (void)tolerance; (void)stopTimeDefined; (void)stopTime;
    return (fmi3Status)CALL(fmi3Error, "sKd", "enter_initialization_mode",
                            HANDLE(instance), startTime);
}

EXPORT fmi3Status fmi3ExitInitializationMode(fmi3Instance instance)
{
    return (fmi3Status)CALL(fmi3Error, "sK", "exit_initialization_mode", HANDLE(instance));
}

EXPORT fmi3Status fmi3Terminate(fmi3Instance instance)
{
    return (fmi3Status)CALL(fmi3Error, "sK", "terminate", HANDLE(instance));
}

EXPORT fmi3Status fmi3Reset(fmi3Instance instance)
{
    (void)instance;
    return fmi3Error;
}

/* --- variable access ---------------------------------------------------------- */

#define GETTER(T, NAME)                                                                  \
    EXPORT fmi3Status fmi3Get##T(fmi3Instance instance,                                  \
                                 const fmi3ValueReference valueReferences[],             \
                                 size_t nValueReferences, fmi3##T values[], size_t nValues) \
    {                                                                                    \
        return (fmi3Status)CALL(fmi3Error, "sKsKKKK", "get", HANDLE(instance), NAME,     \
                                PTR(valueReferences), (unsigned long long)nValueReferences, \
                                PTR(values), (unsigned long long)nValues);               \
    }

#define SETTER(T, NAME)                                                                  \
    EXPORT fmi3Status fmi3Set##T(fmi3Instance instance,                                  \
                                 const fmi3ValueReference valueReferences[],             \
                                 size_t nValueReferences, const fmi3##T values[],        \
                                 size_t nValues)                                         \
    {                                                                                    \
        return (fmi3Status)CALL(fmi3Error, "sKsKKKK", "set", HANDLE(instance), NAME,     \
                                PTR(valueReferences), (unsigned long long)nValueReferences, \
                                PTR(values), (unsigned long long)nValues);               \
    }

GETTER(Float64, "Float64")
GETTER(Float32, "Float32")
GETTER(UInt32, "UInt32")
SETTER(Float64, "Float64")
SETTER(Float32, "Float32")
SETTER(UInt32, "UInt32")

/* --- stepping ------------------------------------------------------------------- */

EXPORT fmi3Status fmi3DoStep(fmi3Instance instance, fmi3Float64 currentCommunicationPoint,
                             fmi3Float64 communicationStepSize,
                             fmi3Boolean noSetFMUStatePriorToCurrentPoint,
                             fmi3Boolean *eventHandlingNeeded, fmi3Boolean *terminateSimulation,
                             fmi3Boolean *earlyReturn, fmi3Float64 *lastSuccessfulTime)
{
    (void)noSetFMUStatePriorToCurrentPoint;
    return (fmi3Status)CALL(fmi3Error, "sKddKKKK", "do_step", HANDLE(instance),
                            currentCommunicationPoint, communicationStepSize,
                            PTR(eventHandlingNeeded), PTR(terminateSimulation),
                            PTR(earlyReturn), PTR(lastSuccessfulTime));
}
